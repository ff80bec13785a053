"""
End-to-end experiment pipeline behind the command line.

An output directory holds one experiment::

    resolved_config.json          the merged configuration of the last command
    network.json                  road network (generated grid or copied file)
    ground_truth.json             true travel-time moments (simulated runs)
    dense_sidecar.jsonl           true routes and node times of every trip
    trajectories_<ratio>.jsonl    sparse corpus per keep ratio
    manifest.json                 seeds, counts and the train/val/test split
    train/<ratio>/                checkpoint.json, em_state.json, history.csv
    eval/                         report.json, metrics.csv, divergence_<ratio>.csv,
                                  conditions_<ratio>_ts<step>.geojson
    infer/estimates.json          per-trajectory estimates of ``infer``

Every file is a pure function of the configuration, so rerunning a command
with the same configuration rewrites identical bytes.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console

from sparse_eta.atoms.config import ExperimentConfig
from sparse_eta.atoms.error_utils import FileIOError, SparseEtaError
from sparse_eta.atoms.input_validator import validate_file_path
from sparse_eta.atoms.path_utils import corpus_filename, ensure_directory_exists, ratio_label
from sparse_eta.molecules.road_network import RoadNetwork, load_network, write_network
from sparse_eta.molecules.routing import Route
from sparse_eta.molecules.trajectories import (
    DenseTrajectory,
    SparseTrajectory,
    read_dense_sidecar,
    read_trajectories,
    write_dense_sidecar,
    write_trajectories,
)
from sparse_eta.organisms.em_trainer import (
    CandidateCache,
    EmState,
    TrajectoryEstimate,
    assignment_counts,
    infer_trajectory,
    load_em_state,
    resume_em,
    run_em,
    save_em_state,
    split_trajectories,
)
from sparse_eta.organisms.metrics import (
    RouteReport,
    TteReport,
    condition_map,
    parameter_recovery_mape,
    route_report,
    state_counts,
    time_step_divergence,
    tte_metrics,
)
from sparse_eta.organisms.report_writer import (
    history_frame,
    metrics_frame,
    read_json,
    write_csv,
    write_geojson,
    write_json,
)
from sparse_eta.organisms.simulator import (
    CongestionProfile,
    GroundTruth,
    gen_corpus,
    gen_ground_truth,
    grid_from_config,
    sparsify_corpus,
)
from sparse_eta.organisms.st_model import (
    ContextTables,
    GraphInputs,
    ModelParams,
    TableSource,
    load_checkpoint,
    save_checkpoint,
)
from sparse_eta.templates.banner import display_section_header
from sparse_eta.templates.errors import display_exception, display_sparse_eta_error
from sparse_eta.templates.progress import (
    display_completion,
    display_processing_update,
    display_progress_bar,
    display_spinner,
)
from sparse_eta.templates.summary import (
    display_artifacts,
    display_dataframe_summary,
    display_em_summary,
    display_route_report,
    display_tte_report,
)

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_FILE = "resolved_config.json"
NETWORK_FILE = "network.json"
TRUTH_FILE = "ground_truth.json"
SIDECAR_FILE = "dense_sidecar.jsonl"
MANIFEST_FILE = "manifest.json"
CHECKPOINT_FILE = "checkpoint.json"
EM_STATE_FILE = "em_state.json"
HISTORY_FILE = "history.csv"

# 06:00-06:30 and 17:00-17:30
CONDITION_TIME_STEPS = (12, 34)


class ExperimentRunner:
    """
    Runs the pipeline commands against one output directory.

    Each command writes ``resolved_config.json`` first and returns the paths
    it wrote. Commands raise :class:`SparseEtaError` on failure; :meth:`run`
    turns that into a ``(False, result)`` outcome with an error panel.
    """

    def __init__(self, config: ExperimentConfig, console: Optional[Console] = None):
        self.config = config
        self.console = console or Console()
        self.out_dir = Path(config.out)

    def run(self, command: str, **kwargs: Any) -> Tuple[bool, Dict[str, Any]]:
        """
        Run one command by name and report the outcome.

        Returns:
            ``(success, result)`` where ``result`` has the written ``artifacts``
            and, on failure, the ``error`` message.
        """
        handlers = {
            "gen": self.generate,
            "train": self.train,
            "eval": self.evaluate,
            "infer": self.infer,
            "export-conditions": self.export_conditions,
        }
        result: Dict[str, Any] = {"command": command, "artifacts": [], "out_dir": str(self.out_dir)}
        if command not in handlers:
            display_processing_update(f"Unknown command: {command}", status="error", console=self.console)
            result["error"] = f"unknown command {command}"
            return False, result
        try:
            artifacts = handlers[command](**kwargs)
        except SparseEtaError as e:
            display_sparse_eta_error(e, console=self.console)
            result["error"] = e.message
            return False, result
        except Exception as e:
            display_exception(e, show_traceback=logger.isEnabledFor(logging.DEBUG), console=self.console)
            result["error"] = str(e)
            return False, result
        result["artifacts"] = [str(p) for p in artifacts]
        display_artifacts(artifacts, self.out_dir, console=self.console)
        display_completion(f"{command} finished", console=self.console)
        return True, result

    # -- shared helpers --------------------------------------------------

    def write_resolved_config(self) -> Path:
        ensure_directory_exists(self.out_dir)
        resolved = self.config.to_dict()
        logger.info("Resolved configuration: %s", resolved)
        return write_json(self.out_dir / RESOLVED_CONFIG_FILE, resolved)

    def _path(self, *parts: str) -> Path:
        return self.out_dir.joinpath(*parts)

    def _labels(self) -> List[Tuple[float, str]]:
        return [(r, ratio_label(r)) for r in self.config.simulation.keep_ratios]

    def build_network(self) -> RoadNetwork:
        """The configured network file, or a generated grid."""
        net_cfg = self.config.network
        if net_cfg.path:
            return load_network(validate_file_path(net_cfg.path))
        return grid_from_config(net_cfg, self.config.seed)

    def load_network(self) -> RoadNetwork:
        """The network of this experiment, written by ``gen``; built from config when absent."""
        path = self._path(NETWORK_FILE)
        if path.exists():
            return load_network(path)
        logger.warning("%s not found; building the network from the configuration", path)
        return self.build_network()

    def _read_corpus(self, keep_ratio: float) -> List[SparseTrajectory]:
        path = self._path(corpus_filename(keep_ratio))
        if not path.exists():
            raise FileIOError(
                message="Trajectory corpus not found; run `gen` first or copy a corpus into the output directory",
                file_path=str(path),
                operation="read"
            )
        return read_trajectories(path)

    def _split(self, trajectories: Sequence[SparseTrajectory]) -> Dict[str, List[SparseTrajectory]]:
        """Train/val/test by the manifest split when there is one, else by a seeded split."""
        manifest_path = self._path(MANIFEST_FILE)
        if manifest_path.exists():
            split = read_json(manifest_path).get("split")
        else:
            split = None
        if not split:
            sp = self.config.split
            split = split_trajectories(
                [t.trajectory_id for t in trajectories], sp.val_fraction, sp.test_fraction, self.config.seed
            )
        membership = {tid: part for part, ids in split.items() for tid in ids}
        out: Dict[str, List[SparseTrajectory]] = {"train": [], "val": [], "test": []}
        for t in trajectories:
            out[membership.get(t.trajectory_id, "train")].append(t)
        return out

    def _tables(self, params: ModelParams, graph: GraphInputs) -> ContextTables:
        """Per-context tables of a model; reports use the configured reference context."""
        m = self.config.model
        return ContextTables(params, graph, (m.table_day_of_week, m.table_weather_id, m.table_holiday_id))

    def _load_trained(self, label: str, net: RoadNetwork) -> Tuple[ModelParams, Optional[np.ndarray]]:
        """Checkpoint of one corpus and, if its EM state is present, the traversal counts."""
        params = load_checkpoint(self._path("train", label, CHECKPOINT_FILE))
        state_path = self._path("train", label, EM_STATE_FILE)
        counts = None
        if state_path.exists():
            state = load_em_state(state_path, net)
            counts = assignment_counts(state.pairs, net.num_segments)
        return params, counts

    # -- commands --------------------------------------------------------

    def generate(self) -> List[Path]:
        """Network, ground truth, dense trips, one sparse corpus per keep ratio, and the manifest."""
        config, sim = self.config, self.config.simulation
        display_section_header("Generating synthetic corpus", console=self.console)
        written = [self.write_resolved_config()]

        with display_spinner("Building road network", console=self.console) as spinner:
            net = self.build_network()
            spinner.text = f"{net.num_nodes} nodes, {net.num_segments} segments"
        written.append(write_network(net, self._path(NETWORK_FILE)))

        truth = gen_ground_truth(net, CongestionProfile.from_config(sim), config.seed)
        written.append(write_json(self._path(TRUTH_FILE), truth.to_document()))

        with display_progress_bar("Simulating trips", sim.trips, console=self.console) as advance:
            dense = gen_corpus(net, truth, sim, config.seed, config.threads, progress_callback=advance)
        written.append(write_dense_sidecar(self._path(SIDECAR_FILE), dense))

        corpora: Dict[str, Any] = {}
        for keep_ratio, label in self._labels():
            sparse = sparsify_corpus(dense, keep_ratio, sim, config.seed)
            path = write_trajectories(self._path(corpus_filename(keep_ratio)), sparse)
            written.append(path)
            corpora[label] = {
                "file": path.name,
                "keep_ratio": keep_ratio,
                "trajectories": len(sparse),
                "fixes": sum(len(t.fixes) for t in sparse),
            }
            display_processing_update(
                f"{label}: {len(sparse)} trajectories, {corpora[label]['fixes']} fixes",
                status="success",
                console=self.console,
            )

        sp = config.split
        manifest = {
            "seed": config.seed,
            "trips": len(dense),
            "network": {"file": NETWORK_FILE, "nodes": net.num_nodes, "segments": net.num_segments},
            "ground_truth": TRUTH_FILE,
            "dense_sidecar": SIDECAR_FILE,
            "corpora": corpora,
            "split": split_trajectories(
                [t.trajectory_id for t in dense], sp.val_fraction, sp.test_fraction, config.seed
            ),
        }
        written.append(write_json(self._path(MANIFEST_FILE), manifest))
        return written

    def train(self, resume: bool = False) -> List[Path]:
        """
        Run EM on the training split of every corpus.

        With ``resume``, a saved ``em_state.json`` is continued instead of
        starting over. The EM state is saved after every iteration.
        """
        config = self.config
        display_section_header("Training", console=self.console)
        written = [self.write_resolved_config()]
        net = self.load_network()

        for keep_ratio, label in self._labels():
            train_dir = ensure_directory_exists(self._path("train", label))
            state_path = train_dir / EM_STATE_FILE

            def save(state: EmState) -> None:
                save_em_state(state, state_path, config)

            if resume and state_path.exists():
                with display_spinner(f"Loading EM state for {label}", console=self.console):
                    state = load_em_state(state_path, net)
                display_processing_update(
                    f"{label}: resuming at iteration {state.iteration}", status="info", console=self.console
                )
                _, state = resume_em(state, net, config, on_iteration=save)
            else:
                if resume:
                    logger.warning("No EM state at %s; training %s from scratch", state_path, label)
                parts = self._split(self._read_corpus(keep_ratio))
                with display_spinner(f"Training on {label}", console=self.console) as spinner:
                    _, state = run_em(
                        net,
                        parts["train"],
                        config,
                        rng=np.random.default_rng(config.seed),
                        val_trajectories=parts["val"],
                        on_iteration=save,
                    )
                    spinner.text = f"{label}: {state.iteration} iterations"

            written.append(save_em_state(state, state_path, config))
            written.append(save_checkpoint(
                state.model,
                train_dir / CHECKPOINT_FILE,
                extra={"corpus": label, "iterations": state.iteration, "stop_reason": state.stop_reason},
            ))
            written.append(write_csv(train_dir / HISTORY_FILE, history_frame(state.history)))
            display_em_summary(label, state.history, state.stop_reason, len(state.pairs), console=self.console)
        return written

    def _evaluate_corpus(
        self,
        net: RoadNetwork,
        tables: TableSource,
        test: Sequence[SparseTrajectory],
        dense: Optional[Dict[str, DenseTrajectory]],
        label: str,
    ) -> Tuple[Optional[TteReport], Optional[RouteReport], Dict[str, int]]:
        cands = self.config.candidates
        cache = CandidateCache(cands.m, cands.tau, cands.oversample)
        pred: List[float] = []
        true: List[float] = []
        route_pairs: List[Tuple[Route, Route]] = []
        departures: List[float] = []
        skipped = 0
        for traj in test:
            est = infer_trajectory(
                tables, net, traj, cands.m, cands.tau, cands.oversample,
                self.config.network.snap_radius_m, cache,
            )
            if not est.complete:
                skipped += 1
                continue
            pred.append(est.total_seconds)
            true.append(traj.duration_s)
            truth_trip = dense.get(traj.source_id or traj.trajectory_id) if dense is not None else None
            if truth_trip is None:
                continue
            for p in est.pairs:
                t_a, t_b = traj.fixes[p.position][2], traj.fixes[p.position + 1][2]
                route_pairs.append((truth_trip.subroute(t_a, t_b), p.route or Route(())))
                departures.append(t_a)
        if skipped:
            logger.warning("%s: %d test trajectories could not be fully matched and were skipped", label, skipped)
        tte = tte_metrics(pred, true, label=label) if pred else None
        routes = route_report(route_pairs, departures, label=label) if dense is not None else None
        return tte, routes, {"evaluated": len(pred), "skipped": skipped}

    def evaluate(self) -> List[Path]:
        """
        Travel-time and route-recovery metrics on the test split of every corpus.

        The free-flow model is evaluated alongside the trained one. Route
        metrics need the dense sidecar and are skipped with a warning without
        it; parameter recovery needs the ground truth.
        """
        display_section_header("Evaluation", console=self.console)
        written = [self.write_resolved_config()]
        net = self.load_network()
        graph = GraphInputs.from_network(net)

        sidecar_path = self._path(SIDECAR_FILE)
        dense = read_dense_sidecar(sidecar_path, net) if sidecar_path.exists() else None
        if dense is None:
            logger.warning("No dense sidecar at %s; route metrics skipped", sidecar_path)
            display_processing_update("No dense sidecar: route metrics skipped", status="warning", console=self.console)
        truth_path = self._path(TRUTH_FILE)
        truth = GroundTruth.from_document(read_json(truth_path)) if truth_path.exists() else None
        free_flow = self._tables(ModelParams.init(self.config.model, self.config.seed), graph)

        tte_reports: Dict[str, TteReport] = {}
        route_reports: Dict[str, RouteReport] = {}
        report: Dict[str, Any] = {"corpora": {}}
        for keep_ratio, label in self._labels():
            test = self._split(self._read_corpus(keep_ratio))["test"]
            params, counts = self._load_trained(label, net)
            tables = self._tables(params, graph)
            table = tables.table
            with display_spinner(f"Evaluating {label} on {len(test)} trajectories", console=self.console):
                tte, routes, counts_info = self._evaluate_corpus(net, tables, test, dense, label)
                ff_tte, ff_routes, _ = self._evaluate_corpus(net, free_flow, test, dense, f"{label}/free_flow")
            entry: Dict[str, Any] = {
                "keep_ratio": keep_ratio,
                "checkpoint": params.fingerprint(),
                "trajectories": counts_info,
                "tte": tte.to_dict() if tte else None,
                "route": routes.to_dict() if routes else None,
                "free_flow": {
                    "tte": ff_tte.to_dict() if ff_tte else None,
                    "route": ff_routes.to_dict() if ff_routes else None,
                },
            }
            if tte:
                tte_reports[label] = tte
            if routes:
                route_reports[label] = routes

            if truth is not None:
                divergence = time_step_divergence(table, truth.true_mu, counts)
                written.append(write_csv(self._path("eval", f"divergence_{label}.csv"), divergence))
                if counts is not None:
                    recovery = parameter_recovery_mape(table, truth.true_mu, counts)
                    entry["recovery"] = {
                        "mape_pct": recovery.mape_pct,
                        "entries": recovery.n_entries,
                        "min_count": recovery.min_count,
                    }

            for ts in CONDITION_TIME_STEPS:
                conditions = condition_map(table, net, ts, counts)
                entry.setdefault("conditions", {})[str(ts)] = state_counts(conditions)
                written.append(write_geojson(self._path("eval", f"conditions_{label}_ts{ts}.geojson"), conditions, net, ts))
            report["corpora"][label] = entry

        frame = metrics_frame(tte_reports, route_reports)
        written.append(write_csv(self._path("eval", "metrics.csv"), frame))
        written.append(write_json(self._path("eval", "report.json"), report))
        display_tte_report(tte_reports, console=self.console)
        if route_reports:
            display_route_report(route_reports, console=self.console)
        display_dataframe_summary(frame, title="metrics.csv", console=self.console)
        return written

    def infer(self, input_path: str, label: Optional[str] = None) -> List[Path]:
        """Per-pair routes and times for every trajectory in a JSON-lines file."""
        display_section_header("Inference", console=self.console)
        written = [self.write_resolved_config()]
        label = label or self._labels()[0][1]
        net = self.load_network()
        params = load_checkpoint(self._path("train", label, CHECKPOINT_FILE))
        tables = self._tables(params, GraphInputs.from_network(net))
        trajectories = read_trajectories(validate_file_path(input_path))
        cands = self.config.candidates
        cache = CandidateCache(cands.m, cands.tau, cands.oversample)
        estimates = [
            infer_trajectory(tables, net, t, cands.m, cands.tau, cands.oversample, self.config.network.snap_radius_m, cache)
            for t in trajectories
        ]
        incomplete = sum(not e.complete for e in estimates)
        if incomplete:
            display_processing_update(
                f"{incomplete} of {len(estimates)} trajectories only partly matched",
                status="warning",
                console=self.console,
            )
        written.append(write_json(
            self._path("infer", "estimates.json"),
            {"checkpoint": params.fingerprint(), "corpus": label, "estimates": [_estimate_record(e) for e in estimates]},
        ))
        return written

    def export_conditions(
        self,
        time_steps: Sequence[int] = CONDITION_TIME_STEPS,
        label: Optional[str] = None,
    ) -> List[Path]:
        """GeoJSON speed-state maps of one trained corpus at the given time steps."""
        display_section_header("Road conditions", console=self.console)
        written = [self.write_resolved_config()]
        label = label or self._labels()[0][1]
        net = self.load_network()
        params, counts = self._load_trained(label, net)
        table = self._tables(params, GraphInputs.from_network(net)).table
        for ts in time_steps:
            conditions = condition_map(table, net, ts, counts)
            written.append(write_geojson(self._path("conditions", f"{label}_ts{ts}.geojson"), conditions, net, ts))
            tally = state_counts(conditions)
            display_processing_update(
                f"ts {ts}: " + ", ".join(f"{k}={v}" for k, v in tally.items()),
                status="info",
                console=self.console,
            )
        if counts is None:
            logger.warning("No EM state for %s; no segment is flagged as unobserved", label)
        return written


def _estimate_record(est: TrajectoryEstimate) -> Dict[str, Any]:
    return {
        "id": est.trajectory_id,
        "total_seconds": est.total_seconds,
        "total_sigma": est.total_sigma,
        "complete": est.complete,
        "pairs": [
            {
                "position": p.position,
                "segments": list(p.route.segment_ids) if p.route is not None else None,
                "seconds": p.seconds,
                "sigma": p.sigma,
                "error": p.error,
            }
            for p in est.pairs
        ],
    }
