"""Hong-Ou-Mandel interference between independent Kerr soliton microcombs."""

__version__ = "0.1.0"
