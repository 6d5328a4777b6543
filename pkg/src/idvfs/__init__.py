"""Voltage/frequency scaling for capacitor-powered intermittent devices.

Modules:

* ``windows``       performance windows and voltage lookup
* ``energy_model``  per-cycle energy, capacitor store, regulator, discharge counts
* ``design_fbtc``   comparator divider sizing for the feedback threshold controller
* ``policies``      static / D2VFS / FBTC governors and their circuitry
* ``checkpoint``    interrupt- and probe-driven checkpointing
* ``nvm``           FRAM save/restore cost
* ``harvest``       sources and the charging network
* ``emulator``      the run loop, configuration and sweeps
"""

__version__ = "0.1.0"
