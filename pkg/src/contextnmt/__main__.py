from contextnmt.contextnmt import main

main()
