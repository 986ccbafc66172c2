"""
Initialize routes package
"""

from src.routes.commands import COMMANDS
