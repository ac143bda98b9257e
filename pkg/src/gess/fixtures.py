"""Small synthetic scenes and dataset folders for tests, benchmarks and smoke runs."""
from pathlib import Path

import numpy as np

from gess.evalkit import save_image

SQUARE = 8


def checkerboard(h, w, seed=0, square=SQUARE):
    """Blocks of ``square`` px, each with its own random gray level (so patches are distinctive)."""
    rng = np.random.default_rng(seed)
    levels = rng.uniform(20, 235, (h // square + 1, w // square + 1))
    return np.kron(levels, np.ones((square, square)))[:h, :w]


def translated_pair(size=64, shift=3, seed=0):
    """``(A, B)`` with ``B(x) = A(x - shift)``, i.e. homography A->B is a +shift x-translation."""
    canvas = checkerboard(size, size + shift, seed)
    return canvas[:, shift:shift + size], canvas[:, :size]


def step_depth(h=8, w=8, near=1.0, far=5.0, col=4):
    d = np.full((h, w), near)
    d[:, col:] = far
    return d


def write_sequence(root, name, images, homographies):
    """Write ``1.png, 2.png, ...`` plus ``H_1_k`` files (one per image after the first)."""
    folder = Path(root) / name
    folder.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images, start=1):
        save_image(folder / f"{i}.png", img)
    for k, h in enumerate(homographies, start=2):
        rows = [" ".join(f"{v:.10g}" for v in row) for row in np.asarray(h, dtype=np.float64)]
        (folder / f"H_1_{k}").write_text("\n".join(rows) + "\n")
    return folder


def write_toy_dataset(root, seed=0, size=64, shift=3):
    """Two sequences: ``i_self`` (identical pair, identity H) and ``v_shift`` (translated pair)."""
    img = np.rint(checkerboard(size, size, seed))
    write_sequence(root, "i_self", [img, img], [np.eye(3)])
    a, b = translated_pair(size, shift, seed + 1)
    t = np.eye(3)
    t[0, 2] = shift
    write_sequence(root, "v_shift", [np.rint(a), np.rint(b)], [t])
    return Path(root)
