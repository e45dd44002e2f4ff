# Shipped run configurations (TOML)
