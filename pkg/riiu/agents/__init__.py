from .base import Agent
from .stack import StackConfig, StackMemory, RiiuStackAgent, stack_forward, workspace_update
from .baselines import GruAgent, MlpAgent, make_agent
from .training import *
