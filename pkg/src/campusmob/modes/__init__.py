"""The three mobility modes."""

from .everybody_drives import EverybodyDrives
from .ridepooling import Ridepooling
from .ridesharing import Ridesharing

MODE_CLASSES = {
    EverybodyDrives.name: EverybodyDrives,
    Ridesharing.name: Ridesharing,
    Ridepooling.name: Ridepooling,
}


def make_mode(name: str, cfg, router):
    try:
        cls = MODE_CLASSES[name]
    except KeyError:
        raise ValueError(f"unknown mode {name!r}; expected one of {', '.join(MODE_CLASSES)}") from None
    return cls(cfg, router)


__all__ = ["EverybodyDrives", "Ridesharing", "Ridepooling", "MODE_CLASSES", "make_mode"]
