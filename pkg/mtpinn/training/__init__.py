# Loss terms, collocation sampling, optimizer, loss weighting and the curriculum trainer
