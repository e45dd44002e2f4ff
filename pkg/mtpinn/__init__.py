# MT-PINN optimal execution solver
__version__ = "1.0.0"
