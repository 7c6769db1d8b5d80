from hdbf.cli import main

raise SystemExit(main())
