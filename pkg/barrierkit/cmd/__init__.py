"""
Command line utilities. Each module defines one :class:`CliUtility`
subclass; :mod:`barrierkit.cmd.main` exposes them as subcommands.
"""
