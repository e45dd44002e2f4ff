# Rollouts, terminal-inventory statistics and error reports
