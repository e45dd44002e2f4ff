# Intraday feed ingestion and execution backtests
