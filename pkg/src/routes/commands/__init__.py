"""
Initialize experiment commands
"""

from src.routes.commands.data import cache_clear, cache_list, describe, gen_data
from src.routes.commands.experiments import ablate, grad_check, grid_search, run, sweep

COMMANDS = (gen_data, describe, run, ablate, sweep, grid_search, grad_check, cache_list, cache_clear)
