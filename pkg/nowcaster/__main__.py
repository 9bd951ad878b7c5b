from nowcaster.cli import main

main()
