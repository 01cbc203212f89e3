"""
Result files. Floats are written with ``repr`` so that CSV files read back
bitwise and JSON documents are byte-identical between identical runs.

Output tree::

    <out>/manifest.json
    <out>/slices/slice_<k>.{csv,json,svg}
    <out>/barriers/<branch>_<k>.csv
    <out>/verify/<check>.json
"""

import csv
import io
import json
import logging
import os
from typing import IO, Any, Dict, List, Optional, Sequence

import numpy as np

from .assemble import AdmissibleSetSlice, SegmentTag
from .barrier import BarrierTrajectory
from .config import OUTPUT_FORMATS
from .transform import TxMatrix

logger = logging.getLogger(__name__)

EXPORT_FORMATS = OUTPUT_FORMATS

#: Stroke colors by segment tag.
SEGMENT_COLORS = {
    SegmentTag.BARRIER_ARC: "blue",
    SegmentTag.USABLE_PART: "green",
    SegmentTag.CONSTRAINT_EDGE: "black",
}
TANGENCY_COLOR = "red"


def _num(value: float) -> str:
    return repr(float(value))


def _plain(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer, np.bool_)):
        return value.item()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps_json(data: Any) -> str:
    """Serialize `data` with sorted keys and a trailing newline."""
    return json.dumps(data, sort_keys=True, indent=2, default=_plain) + "\n"


def write_json(data: Any, stream: IO[str]) -> None:
    """Write `data` as a deterministic JSON document."""
    stream.write(dumps_json(data))


def trajectory_header(n: int, m: int, w: int) -> List[str]:
    """Column names of a trajectory CSV."""
    return (
        ["s", "t"]
        + [f"x{k + 1}" for k in range(n)]
        + [f"lam{k + 1}" for k in range(n)]
        + [f"u{k + 1}" for k in range(m)]
        + [f"d{k + 1}" for k in range(w)]
        + ["hamiltonian"]
    )


def write_trajectory_csv(traj: BarrierTrajectory, stream: IO[str]) -> None:
    """Write one row per sample of `traj`."""
    n, m, w = traj.x.shape[1], traj.u.shape[1], traj.d.shape[1]
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(trajectory_header(n, m, w))
    for k in range(len(traj)):
        row = [traj.s[k], traj.t[k], *traj.x[k], *traj.lam[k], *traj.u[k], *traj.d[k]]
        writer.writerow([_num(v) for v in row] + [_num(traj.hamiltonian[k])])


def read_trajectory_csv(stream: IO[str]) -> Dict[str, np.ndarray]:
    """Read a trajectory CSV into arrays keyed ``s``, ``t``, ``x``, ``lam``,
    ``u``, ``d`` and ``hamiltonian``.

    Raises:
        ValueError: The header is not a trajectory header.
    """
    reader = csv.reader(stream)
    header = next(reader, None)
    if not header or header[:2] != ["s", "t"] or header[-1] != "hamiltonian":
        raise ValueError("not a trajectory CSV")
    n = sum(1 for name in header if name.startswith("x"))
    m = sum(1 for name in header if name.startswith("u"))
    w = sum(1 for name in header if name.startswith("d"))
    if header != trajectory_header(n, m, w):
        raise ValueError("trajectory CSV columns out of order")
    rows = np.array([[float(v) for v in row] for row in reader], dtype=float)
    rows = rows.reshape(-1, len(header))
    cut = np.cumsum([1, 1, n, n, m, w])
    s, t, x, lam, u, d, ham = np.split(rows, cut, axis=1)
    return {
        "s": s[:, 0],
        "t": t[:, 0],
        "x": x,
        "lam": lam,
        "u": u,
        "d": d,
        "hamiltonian": ham[:, 0],
    }


def write_slice_csv(slice_: AdmissibleSetSlice, stream: IO[str]) -> None:
    """Write the slice boundary, one row per segment vertex."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["segment", "tag", "constraint", "label", "p", "q"])
    for k, seg in enumerate(slice_.segments):
        constraint = "" if seg.constraint is None else str(seg.constraint)
        for point in seg.points:
            writer.writerow(
                [k, seg.tag.name, constraint, seg.label, _num(point[0]), _num(point[1])]
            )


def export_slices(slices: Sequence[AdmissibleSetSlice], stream: IO[str]) -> None:
    """Write `slices` as one JSON array."""
    write_json([slice_.to_dict() for slice_ in slices], stream)


def slice_view(slice_: AdmissibleSetSlice, margin: float = 0.05) -> TxMatrix:
    """Map from the slice plane to SVG user units: the second slice
    coordinate points up and the drawing starts at the origin."""
    points = slice_.polygon
    if len(points) == 0:
        return TxMatrix.VFLIP
    lower = points.min(axis=0)
    upper = points.max(axis=0)
    pad = margin * max(float(np.max(upper - lower)), 1.0)
    return TxMatrix.VFLIP.translate(pad - lower[0], pad + upper[1])


def render_svg(slice_: AdmissibleSetSlice, title: str = "") -> str:
    """SVG drawing of a slice in state units. Barrier arcs are blue, usable
    parts green, constraint edges black and tangency junctions red."""
    view = slice_view(slice_)
    points = slice_.polygon
    if len(points):
        corners = view.apply([points.min(axis=0), points.max(axis=0)])
        size = np.abs(corners[1] - corners[0]) + 2 * corners.min(axis=0)
    else:
        size = np.array([1.0, 1.0])
    radius = 0.005 * float(np.max(size))
    out = io.StringIO()
    out.write(
        '<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="0 0 {_num(size[0])} {_num(size[1])}">\n'
    )
    if title:
        out.write(f"  <title>{title}</title>\n")
    for k, seg in enumerate(slice_.segments):
        coords = " ".join(f"{_num(p)},{_num(q)}" for p, q in view.apply(seg.points))
        out.write(
            f'  <polyline id="segment-{k}" class="{seg.tag.name.lower()}" '
            f'fill="none" stroke="{SEGMENT_COLORS[seg.tag]}" stroke-width="1" '
            f'vector-effect="non-scaling-stroke" points="{coords}"/>\n'
        )
    for k, junction in enumerate(slice_.junctions):
        cx, cy = view.sample(junction[0], junction[1])
        out.write(
            f'  <circle id="tangency-{k}" class="tangency" fill="{TANGENCY_COLOR}" '
            f'cx="{_num(cx)}" cy="{_num(cy)}" r="{_num(radius)}"/>\n'
        )
    out.write("</svg>\n")
    return out.getvalue()


def render_png(slices: Sequence[AdmissibleSetSlice], path: str) -> None:
    """Overlay the boundaries of `slices` in one PNG figure.

    Raises:
        ImportError: matplotlib is not installed.
    """
    # pylint: disable=import-outside-toplevel
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 5))
    try:
        for slice_ in slices:
            for seg in slice_.segments:
                ax.plot(seg.points[:, 0], seg.points[:, 1], color=SEGMENT_COLORS[seg.tag], lw=0.8)
            if slice_.junctions:
                junctions = np.array(slice_.junctions)
                ax.plot(
                    junctions[:, 0],
                    junctions[:, 1],
                    "o",
                    color=TANGENCY_COLOR,
                    ms=3,
                )
        coords = slices[0].coords if slices else (1, 2)
        ax.set_xlabel(f"x{coords[0] + 1}")
        ax.set_ylabel(f"x{coords[1] + 1}")
        fig.savefig(path, dpi=150, metadata={"Software": None})
    finally:
        plt.close(fig)


class ResultWriter:
    """Single writer for an output tree. All files of a run go through one
    instance so concurrent jobs never write directly.

    Use as a context manager::

        with ResultWriter("out") as writer:
            writer.write_json("manifest.json", manifest)
    """

    def __init__(self, root: str, formats: Sequence[str] = ("csv", "json", "svg")) -> None:
        unknown = sorted(set(formats) - set(EXPORT_FORMATS))
        if unknown:
            raise ValueError(f"unknown export formats: {', '.join(unknown)}")
        self.root = root
        self.formats = tuple(formats)
        self.written: List[str] = []

    def __enter__(self) -> "ResultWriter":
        self._makedirs(self.root)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        logger.info("results written", extra={"root": self.root, "files": len(self.written)})

    @staticmethod
    def _makedirs(path: str) -> None:
        try:
            os.makedirs(path, exist_ok=True)
        except OSError as exc:
            raise OSError(exc.errno, f"cannot create directory: {exc.strerror}", path) from exc

    def path(self, relpath: str) -> str:
        """Absolute location of `relpath` inside the tree."""
        return os.path.join(self.root, relpath)

    def write_text(self, relpath: str, text: str) -> str:
        """Write `text` to `relpath`, creating parent directories."""
        path = self.path(relpath)
        self._makedirs(os.path.dirname(path) or ".")
        try:
            with open(path, "w", encoding="utf-8", newline="") as fout:
                fout.write(text)
        except OSError as exc:
            raise OSError(exc.errno, f"cannot write result: {exc.strerror}", path) from exc
        self.written.append(relpath)
        return path

    def write_json(self, relpath: str, data: Any) -> str:
        """Write `data` as deterministic JSON."""
        return self.write_text(relpath, dumps_json(data))

    def write_trajectory(self, relpath: str, traj: BarrierTrajectory) -> str:
        """Write a barrier trajectory CSV."""
        out = io.StringIO()
        write_trajectory_csv(traj, out)
        return self.write_text(relpath, out.getvalue())

    def write_slice(
        self, index: int, slice_: AdmissibleSetSlice, title: Optional[str] = None
    ) -> List[str]:
        """Write ``slices/slice_<index>`` in every configured format except
        png, which covers a whole run."""
        stem = f"slices/slice_{index}"
        paths = []
        if "csv" in self.formats:
            out = io.StringIO()
            write_slice_csv(slice_, out)
            paths.append(self.write_text(f"{stem}.csv", out.getvalue()))
        if "json" in self.formats:
            paths.append(self.write_json(f"{stem}.json", slice_.to_dict()))
        if "svg" in self.formats:
            paths.append(self.write_text(f"{stem}.svg", render_svg(slice_, title or stem)))
        return paths

    def write_index(self, slices: Sequence[AdmissibleSetSlice]) -> str:
        """Write every slice into one ``slices.json`` array."""
        out = io.StringIO()
        export_slices(slices, out)
        return self.write_text("slices.json", out.getvalue())

    def write_overview(self, slices: Sequence[AdmissibleSetSlice]) -> Optional[str]:
        """Write ``slices/overview.png`` when png output is configured and
        matplotlib is available."""
        if "png" not in self.formats:
            return None
        path = self.path("slices/overview.png")
        self._makedirs(os.path.dirname(path))
        try:
            render_png(slices, path)
        except ImportError:
            logger.warning("matplotlib is not installed, skipping png output")
            return None
        self.written.append("slices/overview.png")
        return path
