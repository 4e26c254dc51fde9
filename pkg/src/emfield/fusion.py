"""Streaming fusion center: UDP sensor intake to published field frames.

A receiver thread decodes datagrams and groups readings into frames; a
worker fits the current model to each sealed frame and publishes the
reconstructed grid as one message per grid row.  Frames seal either when
every configured sensor has reported or when the partial timeout expires
with at least `quorum` readings present.  Each frame id is published at
most once, in increasing order.
"""

from __future__ import annotations

import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import osc
from .errors import ConfigurationError, EmfieldError
from .geometry import GridSpec, SensorArray, default_sensors, make_grid
from .gp import fit, predict
from .hyperopt import HyperPrior, optimize
from .kernels import KernelSpec, default_spec
from .meanfn import MeanSpec, zero_mean

MODES = ("predict-only", "refit-on-frame")


@dataclass(frozen=True)
class Frame:
    """One sealed set of sensor readings, ready to reconstruct."""

    frame_id: int
    readings: tuple[osc.SensorReading, ...]
    complete: bool

    def positions(self) -> np.ndarray:
        return np.array([[r.x, r.y] for r in self.readings])

    def values(self) -> np.ndarray:
        return np.array([r.value_db for r in self.readings])


class FrameAssembler:
    """Groups readings into frames; pure logic so it tests without sockets.

    A duplicate sensor id within the open frame drops that frame and starts
    a new one seeded with the fresh reading.
    """

    def __init__(self, n_sensors: int, quorum: int, partial_timeout_s: float):
        if not 1 <= quorum <= n_sensors:
            raise ConfigurationError(f"quorum must be in [1, {n_sensors}], got {quorum}")
        self.n_sensors = n_sensors
        self.quorum = quorum
        self.partial_timeout_s = partial_timeout_s
        self.dropped = 0
        self._next_id = 0
        self._pending: dict[int, osc.SensorReading] = {}
        self._started = 0.0

    def _seal(self, complete: bool) -> Frame:
        readings = tuple(sorted(self._pending.values(), key=lambda r: r.sensor_id))
        frame = Frame(frame_id=self._next_id, readings=readings, complete=complete)
        self._next_id += 1
        self._pending = {}
        return frame

    def add(self, reading: osc.SensorReading, now: float | None = None) -> Frame | None:
        now = time.monotonic() if now is None else now
        if reading.sensor_id in self._pending:
            self.dropped += 1
            self._pending = {}
        if not self._pending:
            self._started = now
        self._pending[reading.sensor_id] = reading
        if len(self._pending) == self.n_sensors:
            return self._seal(complete=True)
        return None

    def poll(self, now: float | None = None) -> Frame | None:
        """Seal the open frame if the partial timeout has passed with quorum."""
        now = time.monotonic() if now is None else now
        if (
            len(self._pending) >= self.quorum
            and now - self._started >= self.partial_timeout_s
        ):
            return self._seal(complete=False)
        return None

    @property
    def pending_count(self) -> int:
        return len(self._pending)


@dataclass(frozen=True)
class FusionConfig:
    kernel: KernelSpec = field(default_factory=lambda: default_spec("matern32", n_dims=2))
    mean: MeanSpec = field(default_factory=zero_mean)
    grid: GridSpec = field(default_factory=GridSpec)
    sensors: SensorArray = field(default_factory=default_sensors)
    listen: tuple[str, int] = ("127.0.0.1", 9000)
    publish: tuple[str, int] = ("127.0.0.1", 9001)
    mode: str = "predict-only"
    quorum: int = 5
    partial_timeout_s: float = 0.25
    publish_variance: bool = False
    refit_interval_s: float = 30.0
    refit_restarts: int = 1
    refit_seed: int = 0
    prior: HyperPrior = field(default_factory=HyperPrior)
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")


def reconstruct_frame(frame: Frame, kernel: KernelSpec, mean: MeanSpec, grid_points: np.ndarray):
    """Fit the frame's readings and predict the grid; returns (mean, variance)."""
    model = fit(frame.positions(), frame.values(), kernel, mean)
    pred = predict(model, grid_points)
    return pred.mean, pred.variance


def frame_messages(frame_id: int, values: np.ndarray, grid: GridSpec, address_kind: str = "field"):
    """Split a grid vector into per-row wire messages (x index major)."""
    rows = np.asarray(values, dtype=float).reshape(grid.nx, grid.ny)
    encode = {"field": osc.encode_field_row, "variance": osc.encode_variance_row}[address_kind]
    return [encode(frame_id, i, rows[i]) for i in range(grid.nx)]


class FusionService:
    """Receiver thread + worker pool around a FrameAssembler.

    Publishing is serialized under a lock and guarded by a seen-ids set so a
    frame id goes out at most once even with several workers.
    """

    def __init__(self, config: FusionConfig):
        self.config = config
        self.counters = osc.Counters()
        self.assembler = FrameAssembler(
            n_sensors=len(config.sensors.ids),
            quorum=config.quorum,
            partial_timeout_s=config.partial_timeout_s,
        )
        self.grid_points = make_grid(config.grid)
        self.frames_completed = 0
        self.frames_partial = 0
        self.frames_published = 0
        self.frames_failed = 0
        self.refits = 0
        self.refit_failures = 0
        self.last_frame_id = -1
        self._spec = config.kernel
        self._spec_lock = threading.Lock()
        self._last_refit = None
        self._publish_lock = threading.Lock()
        self._published_ids: set[int] = set()
        self._stop = threading.Event()
        self._recv_sock = None
        self._send_sock = None
        self._thread = None
        self._pool = None
        self._started_at = None

    # -- lifecycle -----------------------------------------------------------

    def start(self):
        if self._thread is not None:
            raise ConfigurationError("fusion service already started")
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            sock.bind(self.config.listen)
        except OSError as exc:
            sock.close()
            raise ConfigurationError(f"cannot bind {self.config.listen[0]}:{self.config.listen[1]}: {exc}")
        sock.settimeout(0.05)
        self._recv_sock = sock
        self._send_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._pool = ThreadPoolExecutor(max_workers=self.config.workers)
        self._stop.clear()
        self._started_at = time.monotonic()
        self._thread = threading.Thread(target=self._receive_loop, name="fusion-recv", daemon=True)
        self._thread.start()

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None
        if self._recv_sock is not None:
            self._recv_sock.close()
            self._recv_sock = None
        if self._send_sock is not None:
            self._send_sock.close()
            self._send_sock = None

    @property
    def bound_address(self) -> tuple[str, int]:
        if self._recv_sock is None:
            raise ConfigurationError("fusion service is not started")
        return self._recv_sock.getsockname()

    # -- receive path --------------------------------------------------------

    def _receive_loop(self):
        known = set(self.config.sensors.ids)
        while not self._stop.is_set():
            try:
                data, _addr = self._recv_sock.recvfrom(65536)
            except socket.timeout:
                self._poll_timeout()
                continue
            except OSError:
                break
            try:
                reading = osc.decode_reading(data, known_ids=known, counters=self.counters)
            except EmfieldError as exc:
                self._publish_error(str(exc))
                continue
            if reading is None:
                continue
            frame = self.assembler.add(reading)
            if frame is None:
                frame = self.assembler.poll()
            if frame is not None:
                self._dispatch(frame)

    def _poll_timeout(self):
        frame = self.assembler.poll()
        if frame is not None:
            self._dispatch(frame)

    def _dispatch(self, frame: Frame):
        if frame.complete:
            self.frames_completed += 1
        else:
            self.frames_partial += 1
        self._pool.submit(self._process_frame, frame)

    # -- worker path ---------------------------------------------------------

    def _maybe_refit(self, frame: Frame, now: float):
        if self.config.mode != "refit-on-frame":
            return
        with self._spec_lock:
            due = self._last_refit is None or now - self._last_refit >= self.config.refit_interval_s
            if not due:
                return
            self._last_refit = now
        try:
            result = optimize(
                frame.positions(),
                frame.values(),
                self._spec.family,
                mean=self.config.mean,
                restarts=self.config.refit_restarts,
                seed=self.config.refit_seed + frame.frame_id,
                prior=self.config.prior,
            )
        except EmfieldError:
            self.refit_failures += 1
            return
        with self._spec_lock:
            self._spec = result.kernel
            self.refits += 1

    def _process_frame(self, frame: Frame):
        try:
            self._maybe_refit(frame, time.monotonic())
            with self._spec_lock:
                spec = self._spec
            mean_vec, var_vec = reconstruct_frame(frame, spec, self.config.mean, self.grid_points)
        except EmfieldError as exc:
            self.frames_failed += 1
            self._publish_error(f"frame {frame.frame_id}: {exc}")
            return
        messages = frame_messages(frame.frame_id, mean_vec, self.config.grid, "field")
        if self.config.publish_variance:
            messages += frame_messages(frame.frame_id, var_vec, self.config.grid, "variance")
        with self._publish_lock:
            if frame.frame_id in self._published_ids:
                return
            self._published_ids.add(frame.frame_id)
            for msg in messages:
                self._send_sock.sendto(msg, self.config.publish)
            self.frames_published += 1
            self.last_frame_id = max(self.last_frame_id, frame.frame_id)

    def _publish_error(self, text: str):
        if self._send_sock is None:
            return
        with self._publish_lock:
            try:
                self._send_sock.sendto(osc.encode_error(text), self.config.publish)
            except OSError:
                pass

    # -- reporting -----------------------------------------------------------

    def stats(self) -> dict:
        c = self.counters
        uptime = 0.0 if self._started_at is None else time.monotonic() - self._started_at
        return {
            "received": c.received,
            "ignored_address": c.ignored_address,
            "malformed": c.malformed,
            "rejected_unknown": c.rejected_unknown,
            "frames_completed": self.frames_completed,
            "frames_partial": self.frames_partial,
            "frames_dropped": self.assembler.dropped,
            "frames_published": self.frames_published,
            "frames_failed": self.frames_failed,
            "refits": self.refits,
            "refit_failures": self.refit_failures,
            "last_frame_id": self.last_frame_id,
            "uptime_s": round(uptime, 3),
        }

    def stats_text(self) -> str:
        return "\n".join(f"{key} = {value}" for key, value in self.stats().items()) + "\n"


def serve(config: FusionConfig, duration_s: float | None = None, stop_event: threading.Event | None = None) -> FusionService:
    """Run a fusion service until `duration_s` elapses or `stop_event` fires."""
    service = FusionService(config)
    service.start()
    try:
        if duration_s is not None:
            deadline = time.monotonic() + duration_s
            while time.monotonic() < deadline:
                if stop_event is not None and stop_event.is_set():
                    break
                time.sleep(0.05)
        else:
            while stop_event is None or not stop_event.is_set():
                time.sleep(0.1)
    except KeyboardInterrupt:
        pass
    finally:
        service.stop()
    return service
