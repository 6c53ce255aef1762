"""Network security factors, LRIC nodal pricing, reactive-power objectives and a DQN volt-VAR agent."""
from .netmodel import (Branch, Bus, EconomicParams, Generator, NetworkCase, ShuntBank,
                       ieee14, parse_case, serialize_case)

__version__ = "0.1.0"
