import sys
sys.exit(__import__("pareto_trm.cli", fromlist=["main"]).main())
