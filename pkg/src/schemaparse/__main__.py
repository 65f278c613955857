from schemaparse.cli import main

raise SystemExit(main())
