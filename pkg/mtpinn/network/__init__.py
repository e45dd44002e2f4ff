# Value networks, forward-mode input derivatives and checkpoints
