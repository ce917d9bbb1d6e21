"""Counter-based random streams.

Every stream is keyed by ``(seed, block)`` on top of the Philox4x64 bit
generator, so sample ``i`` of a Monte-Carlo run always comes from block
``i // BLOCK_SIZE`` no matter how many workers produced it.
"""

import numpy as np

BLOCK_SIZE = 1 << 16

_MASK64 = (1 << 64) - 1


def block_generator(seed, block):
    key = ((int(block) & _MASK64) << 64) | (int(seed) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


def uniform(seed, block, size, lo=0.0, hi=1.0):
    u = block_generator(seed, block).random(size)
    return lo + (hi - lo) * u


def box_muller(seed, block, size):
    """Standard normals from Box-Muller on a single counter block.

    Both the cosine and the sine branch are used, so ``ceil(size / 2)``
    uniform pairs are drawn.
    """
    half = (size + 1) // 2
    u = block_generator(seed, block).random((2, half))
    # 1 - u lies in (0, 1], keeps the log finite
    r = np.sqrt(-2.0 * np.log1p(-u[0]))
    theta = 2.0 * np.pi * u[1]
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
    return z[:size]


def block_sizes(samples, block_size=BLOCK_SIZE):
    """Sizes of the counter blocks covering ``samples`` draws."""
    full, rest = divmod(int(samples), block_size)
    return [block_size] * full + ([rest] if rest else [])
