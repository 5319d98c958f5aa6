from .errors import *
from .autophi import *
from .cells import *
from .gridworld import *
from .oracle import *
from . import autodiff, linalg, optim

from ._version import __version__
