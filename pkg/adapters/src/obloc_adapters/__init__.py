"""Thin export scripts that turn per-image model outputs into the
localization engine's file formats (GDSC descriptors, MATCHES v1, 16-bit
label-map PNGs, bilevel mask PNGs).

The engine itself has no knowledge of this package; the contract is the file
formats alone. Model backends are pluggable: the bundled ones are classical,
dependency-light stand-ins that make the full pipeline runnable and testable
offline; neural backends (global-descriptor networks, dense matchers,
promptable segmenters) register under the same interfaces.
"""

from .manifest import AdapterManifest

__all__ = ["AdapterManifest"]
