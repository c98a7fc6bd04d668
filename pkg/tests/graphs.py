import numpy as np


def connected(pos, r):
    """Whether the points form one component when linked below distance ``r``."""
    n = len(pos)
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in range(n):
            if j not in seen and np.linalg.norm(pos[i] - pos[j]) < r:
                seen.add(j)
                stack.append(j)
    return len(seen) == n
