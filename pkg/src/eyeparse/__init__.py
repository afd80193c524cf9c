"""Point-cloud parsing with a 3D CNN reward, a dueling DQN eye window and a residual LSTM."""

__version__ = "0.1.0"
