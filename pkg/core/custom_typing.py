from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray

Vector: TypeAlias = NDArray[np.float64]
Matrix: TypeAlias = NDArray[np.float64]
IndexArray: TypeAlias = NDArray[np.int64]
RandomStream: TypeAlias = np.random.Generator
