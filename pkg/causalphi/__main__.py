from causalphi.cli import main

main()
