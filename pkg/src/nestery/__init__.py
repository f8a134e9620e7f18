"""Nestery: a cloud-in-a-VM control plane.

One physical host (L0) runs guest VMs (L1) that are themselves full cloud
hosts able to run their own guests (L2). Commands travel through a durable
task queue to per-host workers; an admission-control scheduler is the single
authority over capacity; a spot market lets an L1 owner resell slices.
"""

__version__ = "0.1.0"
