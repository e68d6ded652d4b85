import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
import yaml

from fusion_prognostics.clustering.operations import initial_labels_from_pooled_scores
from fusion_prognostics.configurations import ApplicationConfiguration, RunConfig
from fusion_prognostics.exceptions import DataError, InsufficientData, UsageError
from fusion_prognostics.mixture.em import top_sensors
from fusion_prognostics.mixture.model import PenaltyConfig
from fusion_prognostics.pipeline.evaluation import (
    clustering_accuracy,
    cmapss_cohort_errors,
    error_summary,
    evaluate_sim,
    predict_at_percentiles,
    relative_error,
)
from fusion_prognostics.pipeline.model import OfflineModel, OnlineConfig
from fusion_prognostics.pipeline.offline import attach_fit, cross_validate, offline_fit
from fusion_prognostics.pipeline.online import OnlinePredictor
from fusion_prognostics.signals.model import SignalDataset
from fusion_prognostics.signals.operations import truncate_to_min_ttf
from fusion_prognostics.signals.smoothing import select_bandwidth_cv
from fusion_prognostics.simulation.generator import gen_dataset
from fusion_prognostics.storage.bundles import (
    PREDICTIONS_FILE,
    DatasetBundle,
    read_dataset,
    read_fit,
    selection_table,
    write_dataset,
    write_fit,
)
from fusion_prognostics.storage.cmapss import ingest_cmapss
from fusion_prognostics.storage.model import RunManifest
from fusion_prognostics.storage.repository import RunRepositoryInterface, recorded_run
from fusion_prognostics.storage.repository_fs import FileSystemRunRepository

CONFIG_FILE = "config.yaml"
REPORT_FILE = "report.md"
# tables collected by the report, in display order
REPORT_TABLES = (
    ("accuracy.csv", "Clustering accuracy"),
    ("top_sensors.csv", "Leading sensors per failure mode"),
    ("selection.csv", "Sensor selection"),
    ("cv_table.csv", "Cross-validation"),
    ("error_summary.csv", "Relative prediction error"),
    ("cohort_errors.csv", "Relative error by remaining-life cohort"),
    ("rul_intervals.csv", "Relative error by remaining-life interval"),
)


class Application:
    configuration: ApplicationConfiguration
    logger = logging.getLogger("fusion_prognostics.application")

    # Initialization of the fields below happens only once, when a property is accessed for the first time
    _run_config: Optional[RunConfig]

    def __init__(self, configuration: ApplicationConfiguration, run_config_path: Union[str, Path, None] = None):
        self.configuration = configuration
        self.run_config_path = run_config_path or configuration.default_configuration_path
        self._run_config = None

    @property
    def run_config(self) -> RunConfig:
        if self._run_config is None:
            self._run_config = RunConfig.from_yaml(self.run_config_path)
        return self._run_config

    @run_config.setter
    def run_config(self, value: RunConfig):
        self._run_config = value

    def repository(self, path: Union[str, Path, None] = None) -> RunRepositoryInterface:
        path = self.configuration.storage.root if path is None else Path(path)
        return FileSystemRunRepository(path, lock_name=self.configuration.storage.lock_name)

    # Commands

    def simulate(self, out: Union[str, Path], regime: Optional[str] = None):
        config = self.run_config
        sim_config = config.simulation if regime is None else _regime(config, regime)
        study = gen_dataset(sim_config)

        repository = self.repository(out)
        with recorded_run(repository, "simulate", config.digest(), inputs={"regime": regime}):
            write_dataset(repository, study.dataset, study.truth.to_frame())
            repository.write_table("sensors.csv", _sensor_table(study))
            repository.write_text(CONFIG_FILE, _config_yaml(config))

    def fit_offline(
        self,
        data: Union[str, Path],
        out: Union[str, Path],
        K: Optional[int] = None,
        lambda_: Optional[float] = None,
        alpha: Optional[float] = None,
    ) -> OfflineModel:
        config = self.run_config
        penalty = config.penalty.model_dump(by_alias=True)
        penalty |= {key: value for key, value in (("lambda", lambda_), ("alpha", alpha)) if value is not None}
        config = config.with_overrides(K=K, penalty=penalty)

        bundle = read_dataset(self.repository(data))
        repository = self.repository(out)
        with recorded_run(repository, "fit-offline", config.digest(), inputs={"data": str(data)}):
            offline = self._offline_fit(config, truncate_to_min_ttf(bundle.train), config.penalty)
            self._write_offline(repository, offline, bundle.modes("train"))
            repository.write_text(CONFIG_FILE, _config_yaml(config))
        return offline

    def cv(self, data: Union[str, Path], out: Union[str, Path], folds: Optional[int] = None) -> PenaltyConfig:
        config = self.run_config
        if folds is not None:
            config = config.with_overrides(cv=config.cv.model_dump() | {"folds": folds})

        bundle = read_dataset(self.repository(data))
        repository = self.repository(out)
        with recorded_run(repository, "cv", config.digest(), inputs={"data": str(data)}):
            penalty, table = self._tune(config, truncate_to_min_ttf(bundle.train), config.cv)
            repository.write_table("cv_table.csv", table)
            selection = pd.DataFrame([{"lambda": penalty.lambda_, "alpha": penalty.alpha}])
            repository.write_table("cv_selection.csv", selection)
        return penalty

    def predict(
        self,
        model: Union[str, Path],
        data: Union[str, Path],
        out: Union[str, Path],
        t_star: Optional[float] = None,
        percentile: Optional[float] = None,
    ) -> pd.DataFrame:
        if t_star is not None and percentile is not None:
            raise UsageError("Give either t* or a life percentile, not both")

        model_repository = self.repository(model)
        config = RunConfig.from_yaml(model_repository.file_path(CONFIG_FILE))
        bundle = read_dataset(self.repository(data))
        offline = self._load_offline(config, model_repository, bundle)
        predictor = OnlinePredictor(bundle.train, offline, config.online)

        repository = self.repository(out)
        with recorded_run(repository, "predict", config.digest(), inputs={"model": str(model), "data": str(data)}):
            predictions = self._predict_units(predictor, bundle, t_star, percentile)
            repository.write_table(PREDICTIONS_FILE, predictions)
        return predictions

    def evaluate(self, preds: Union[str, Path], out: Union[str, Path], truth: Union[str, Path, None] = None):
        predictions = self.repository(preds).read_table(PREDICTIONS_FILE)
        predictions = predictions.assign(unit_id=predictions["unit_id"].astype(str))
        if truth is not None:
            predictions = _with_truth(predictions, pd.read_csv(truth))
        if "relative_error" not in predictions.columns:
            raise DataError("Predictions carry no actual lives, give a truth table")

        repository = self.repository(out)
        with recorded_run(repository, "evaluate", inputs={"preds": str(preds)}):
            self._write_errors(repository, predictions)

    def ingest_cmapss(
        self, train: Union[str, Path], test: Union[str, Path], rul: Union[str, Path], out: Union[str, Path]
    ):
        config = self.run_config
        data = ingest_cmapss(train, test, rul, excluded=config.cmapss.excluded_sensors, zscore=config.cmapss.zscore)
        repository = self.repository(out)
        with recorded_run(repository, "ingest-cmapss", config.digest()):
            write_dataset(repository, data.combined(), data.truth_frame())

    def report(self, run: Union[str, Path]) -> str:
        repository = self.repository(run)
        repository.acquire_lock()
        try:
            manifest = repository.load_manifest() or RunManifest(command="report")
            content = render_report(repository, manifest)
            manifest.files[REPORT_FILE] = repository.write_text(REPORT_FILE, content)
            repository.save_manifest(manifest)
        finally:
            repository.release_lock()
        return content

    def study(self, out: Union[str, Path]) -> pd.DataFrame:
        """Simulation study: for every SNR regime, generate, tune, fit offline and predict the test units."""
        config = self.run_config
        repository = self.repository(out)
        with recorded_run(repository, "study", config.digest()) as manifest:
            predictions, selections, accuracies, leaders, cv_tables = {}, [], [], [], []
            for regime in config.regimes:
                self.logger.info(f"Study regime {regime}")
                study = gen_dataset(_regime(config, regime))
                offline_train = study.offline_train

                if config.tune:
                    penalty, table = self._tune(config, offline_train, config.cv)
                    cv_tables.append(table.assign(regime=regime))
                else:
                    penalty = config.penalty_for(regime)
                offline = self._offline_fit(config, offline_train, penalty)

                accuracies.append(clustering_accuracy(offline, study.train_modes).assign(regime=regime))
                selections.append(selection_table(offline.fit.selection).assign(regime=regime))
                leaders.append(_top_sensor_table(offline).assign(regime=regime))

                predictor = OnlinePredictor(study.train, offline, config.online)
                regime_predictions = predict_at_percentiles(predictor, study.test, config.percentiles)
                predictions[regime] = regime_predictions
                repository.write_table(f"{regime}/{PREDICTIONS_FILE}", regime_predictions)

            repository.write_table("accuracy.csv", pd.concat(accuracies, ignore_index=True))
            repository.write_table("selection.csv", pd.concat(selections, ignore_index=True))
            repository.write_table("top_sensors.csv", pd.concat(leaders, ignore_index=True))
            if cv_tables:
                repository.write_table("cv_table.csv", pd.concat(cv_tables, ignore_index=True))
            summary = evaluate_sim(predictions)
            repository.write_table("error_summary.csv", summary)
            repository.write_text(CONFIG_FILE, _config_yaml(config))
            repository.write_text(REPORT_FILE, render_report(repository, manifest))
        return summary

    def cmapss(self, data: Union[str, Path], out: Union[str, Path]) -> pd.DataFrame:
        """C-MAPSS study: pooled K-means starting labels, cross-validated penalty, one prediction per test unit."""
        config = self.run_config
        bundle = read_dataset(self.repository(data))
        offline_train = truncate_to_min_ttf(bundle.train)
        cv_config = config.cv.model_copy(update={"folds": config.cmapss.folds})

        repository = self.repository(out)
        with recorded_run(repository, "cmapss", config.digest(), inputs={"data": str(data)}) as manifest:
            init_labels = self._initial_labels(config, offline_train, force=True)
            if config.tune:
                penalty, table = self._tune(config, offline_train, cv_config, init_labels)
                repository.write_table("cv_table.csv", table)
            else:
                penalty = config.penalty
            offline = self._offline_fit(config, offline_train, penalty, init_labels)
            self._write_offline(repository, offline, None)

            online = self._online_config(config, offline)
            predictor = OnlinePredictor(bundle.train, offline, online)
            predictions = self._predict_units(predictor, bundle, None, None)
            repository.write_table(PREDICTIONS_FILE, predictions)
            self._write_errors(repository, predictions)
            repository.write_text(CONFIG_FILE, _config_yaml(config.with_overrides(online=online.model_dump())))
            repository.write_text(REPORT_FILE, render_report(repository, manifest))
        return predictions

    # Steps shared by the commands

    def _initial_labels(self, config: RunConfig, train: SignalDataset, force: bool = False) -> Optional[np.ndarray]:
        if not (force or config.em.init_mode == "labels"):
            return None
        return initial_labels_from_pooled_scores(
            train,
            config.K,
            fve=config.fve,
            seed=config.em.seed,
            restarts=config.kmeans.restarts,
            max_iterations=config.kmeans.max_iterations,
        )

    def _tune(self, config: RunConfig, train: SignalDataset, cv_config, init_labels=None):
        if init_labels is None:
            init_labels = self._initial_labels(config, train)
        result = cross_validate(train, config.K, cv_config, config.em, config.fve, config.kmeans, init_labels)
        return PenaltyConfig(lambda_=result.best_lambda, alpha=result.best_alpha), result.table

    def _offline_fit(self, config: RunConfig, train: SignalDataset, penalty: PenaltyConfig, init_labels=None):
        if init_labels is None:
            init_labels = self._initial_labels(config, train)
        return offline_fit(train, config.K, penalty, config.em, config.fve, config.kmeans, init_labels)

    def _load_offline(self, config: RunConfig, repository: RunRepositoryInterface, bundle: DatasetBundle):
        fit, system_ids = read_fit(repository)
        train = truncate_to_min_ttf(bundle.train)
        if system_ids != train.system_ids:
            raise DataError("The stored fit was made on other training systems than the given dataset holds")
        return attach_fit(train, config.K, fit, config.fve, config.kmeans, config.em.seed)

    def _online_config(self, config: RunConfig, offline: OfflineModel) -> OnlineConfig:
        if not (config.cmapss.select_bandwidth and offline.union_sensors):
            return config.online
        train = offline.dataset
        series = [train.values[i, p] for i in range(train.n_systems) for p in offline.union_sensors]
        bandwidth = select_bandwidth_cv(
            series,
            train.time_grid,
            config.cmapss.bandwidth_candidates,
            folds=config.cmapss.bandwidth_folds,
            robust_iterations=config.online.smoothing.robust_iterations,
            seed=config.seed,
        )
        self.logger.info(f"Cross-validated smoothing bandwidth {bandwidth}")
        smoothing = config.online.smoothing.model_copy(update={"bandwidth": bandwidth})
        return config.online.model_copy(update={"smoothing": smoothing})

    def _predict_units(
        self,
        predictor: OnlinePredictor,
        bundle: DatasetBundle,
        t_star: Optional[float],
        percentile: Optional[float],
    ) -> pd.DataFrame:
        test = bundle.test
        truth = bundle.truth_of("test")
        if percentile is not None:
            return predict_at_percentiles(predictor, test, [percentile])

        grid = test.time_grid
        rows = []
        for unit, (_, known) in zip(test.systems, truth.iterrows()):
            unit_t_star = float(grid[unit.observed_through - 1]) if t_star is None else t_star
            try:
                prediction = predictor.predict(unit, unit_t_star)
            except InsufficientData as error:
                self.logger.warning(f"Unit {unit.id} skipped: {error.message}")
                continue
            row = prediction.record()
            if "true_rul" in known and pd.notna(known["true_rul"]):
                row["true_rul"] = float(known["true_rul"])
            actual = unit.ttf if unit.ttf is not None else known.get("ttf")
            if actual is not None and pd.notna(actual):
                row["actual_life"] = float(actual)
                row["relative_error"] = relative_error(prediction.estimated_life, actual)
            rows.append(row)
        if not rows:
            raise InsufficientData("No test unit could be predicted")
        return pd.DataFrame(rows)

    def _write_offline(self, repository: RunRepositoryInterface, offline: OfflineModel, true_modes):
        write_fit(repository, offline.fit, offline.dataset.system_ids)
        repository.write_table("selection.csv", selection_table(offline.fit.selection))
        repository.write_table("top_sensors.csv", _top_sensor_table(offline))
        if true_modes is not None:
            repository.write_table("accuracy.csv", clustering_accuracy(offline, true_modes))

    def _write_errors(self, repository: RunRepositoryInterface, predictions: pd.DataFrame):
        by = ("percentile",) if "percentile" in predictions.columns else ()
        if by:
            repository.write_table("error_summary.csv", error_summary(predictions, by))
        else:
            repository.write_table("error_summary.csv", error_summary(predictions.assign(scope="all"), ("scope",)))
        if "true_rul" in predictions.columns:
            cohorts, intervals = cmapss_cohort_errors(predictions)
            repository.write_table("cohort_errors.csv", cohorts)
            repository.write_table("rul_intervals.csv", intervals)


def make_app(run_config_path: Union[str, Path, None] = None) -> Application:
    configuration = ApplicationConfiguration()
    app = Application(configuration, run_config_path)
    return app


def render_report(repository: RunRepositoryInterface, manifest: RunManifest) -> str:
    """Markdown report of the plot-ready tables found in a run directory."""
    lines = [f"# {manifest.command} report", ""]
    if manifest.config_digest:
        lines += [f"Configuration digest: `{manifest.config_digest}`", ""]
    for file_name, title in REPORT_TABLES:
        if not repository.does_exist(file_name):
            continue
        table = repository.read_table(file_name)
        lines += [f"## {title}", "", f"Source: `{file_name}`", "", "```", table.to_string(index=False), "```", ""]
    return "\n".join(lines)


def _regime(config: RunConfig, regime: str):
    try:
        return config.simulation.regime(regime)
    except ValueError as error:
        raise UsageError(str(error), regime=regime)


def _sensor_table(study) -> pd.DataFrame:
    truth, cfg = study.truth, study.config
    rows = [
        {
            "mode": k,
            "sensor_id": study.dataset.sensor_ids[p],
            "informative": cfg.is_informative(k, p),
            "rho": truth.sensor_rho[k, p],
            "snr": truth.sensor_snr[k, p],
        }
        for k in range(cfg.K)
        for p in range(cfg.n_sensors)
    ]
    return pd.DataFrame(rows)


def _top_sensor_table(offline: OfflineModel, n: int = 4) -> pd.DataFrame:
    rows = [
        {"mode": k, "rank": rank + 1, "sensor_id": sensor_id, "norm": norm}
        for k in range(offline.K)
        for rank, (sensor_id, norm) in enumerate(top_sensors(offline.fit.selection, k, n))
    ]
    return pd.DataFrame(rows, columns=["mode", "rank", "sensor_id", "norm"])


def _with_truth(predictions: pd.DataFrame, truth: pd.DataFrame) -> pd.DataFrame:
    if not {"system_id", "ttf"} <= set(truth.columns):
        raise DataError("Truth table needs the columns system_id and ttf")
    actual = truth.assign(system_id=truth["system_id"].astype(str)).set_index("system_id")["ttf"]
    missing = set(predictions["unit_id"]) - set(actual.index)
    if missing:
        raise DataError(f"Truth table lacks {len(missing)} predicted units")
    actual_life = actual.loc[predictions["unit_id"]].to_numpy(dtype=float)
    return predictions.assign(
        actual_life=actual_life, relative_error=relative_error(predictions["estimated_life"].to_numpy(), actual_life)
    )


def _config_yaml(config: RunConfig) -> str:
    return yaml.safe_dump(config.model_dump(mode="json", by_alias=True), sort_keys=True)
