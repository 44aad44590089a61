from smoothsel.bench.cli import main

raise SystemExit(main())
