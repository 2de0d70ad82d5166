"""Digital elevation model reconstruction from fisheye descent imagery.

Two scene representations are optimized jointly against the input images:
a hash-encoded volumetric radiance field and an explicit height field that
directly yields the output DEM. A synthetic descent simulator and the DEM
evaluation metrics (AED, RED, coverage) round out the pipeline.
"""

import ctypes
import sys

__version__ = "0.1.0"


def _tune_allocator():
    # The training loop churns through large temporary arrays; with glibc's
    # default mmap threshold every block >= 32 MiB is returned to the kernel
    # on free and re-faulted on the next allocation, which dominates runtime
    # on some kernels. Raising the threshold keeps blocks on the heap.
    if not sys.platform.startswith("linux"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6")
        m_mmap_threshold, m_trim_threshold = -3, -1
        libc.mallopt(m_mmap_threshold, 1 << 30)
        libc.mallopt(m_trim_threshold, 1 << 30)
    except OSError:
        pass


_tune_allocator()
