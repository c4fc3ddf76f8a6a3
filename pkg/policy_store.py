"""Offline policy sets: build, fingerprint and (de)serialize as versioned npz files."""

import io
import logging
import os
import time
import zipfile
from dataclasses import dataclass

import numpy as np

from components.constrained_flight import CFPolicy, SuccessSet, solve_cf
from components.unconstrained_flight import UFPolicy, solve_uf
from config import CF_POLICY_FILE, POLICY_FORMAT_VERSION, UF_POLICY_FILE
from errors import PolicyFormatError
from experiment_config import ExperimentConfig
from mdp_kernel import DiscreteActionSet, InterpGrid, QStack
from utils import config_fingerprint, format_duration

logger = logging.getLogger(__name__)

ZIP_TIMESTAMP = (1980, 1, 1, 0, 0, 0)

CF_KEYS = (
    "version",
    "fingerprint",
    "alpha",
    "knots_0",
    "knots_1",
    "knots_2",
    "knots_3",
    "action_levels",
    "action_pairs",
    "tables",
    "out_of_horizon",
    "horizon_dt",
    "phi",
    "success",
    "eps_cf",
    "eta_sample_count",
    "eta_sigma_floor",
)
UF_KEYS = (
    "version",
    "fingerprint",
    "alpha",
    "knots_0",
    "knots_1",
    "knots_2",
    "knots_3",
    "action_levels",
    "action_pairs",
    "values",
    "q_values",
    "policy",
    "success",
)


@dataclass(frozen=True, eq=False)
class PolicySet:
    """CF and UF policies solved for one alpha."""

    alpha: float
    cf: CFPolicy
    uf: UFPolicy
    fingerprint: str


def policy_fingerprint(config: ExperimentConfig, alpha: float) -> str:
    return config_fingerprint(
        {"version": POLICY_FORMAT_VERSION},
        config.policy,
        config.limits,
        config.thresholds,
        config.reward_params(alpha),
    )


def alpha_directory(root: str, alpha: float) -> str:
    return os.path.join(root, f"alpha_{alpha:.4f}")


def build_policy_set(config: ExperimentConfig, alpha: float) -> PolicySet:
    """Run the offline CF and UF solvers for one alpha.

    Raises:
        ConvergenceError: if either infinite-horizon solve fails to converge.
    """
    params = config.reward_params(alpha)
    started = time.perf_counter()
    cf = solve_cf(config.policy, config.limits, params, config.thresholds)
    uf = solve_uf(config.policy, config.limits, params, config.thresholds)
    logger.info(
        "Built policies for alpha=%s in %s",
        alpha,
        format_duration(time.perf_counter() - started),
    )
    return PolicySet(alpha, cf, uf, policy_fingerprint(config, alpha))


def _write_npz(path: str, arrays: dict[str, np.ndarray]) -> None:
    """Write arrays as an npz archive with fixed timestamps and member order."""
    tmp_path = f"{path}.tmp"
    with zipfile.ZipFile(tmp_path, "w", compression=zipfile.ZIP_DEFLATED) as archive:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=ZIP_TIMESTAMP)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            buffer = io.BytesIO()
            np.lib.format.write_array(buffer, np.asarray(arrays[name]), allow_pickle=False)
            archive.writestr(info, buffer.getvalue())
    os.replace(tmp_path, path)


def _grid_arrays(grid: InterpGrid, action_set: DiscreteActionSet) -> dict[str, np.ndarray]:
    arrays = {f"knots_{i}": knots for i, knots in enumerate(grid.knots)}
    arrays["action_levels"] = np.asarray(action_set.levels)
    arrays["action_pairs"] = np.asarray(action_set.pairs, dtype=np.int64)
    return arrays


def _common(policy_set: PolicySet, success: SuccessSet) -> dict[str, np.ndarray]:
    return {
        "version": np.array(POLICY_FORMAT_VERSION),
        "fingerprint": np.array(policy_set.fingerprint),
        "alpha": np.array(policy_set.alpha),
        "success": np.array([success.position_tol, success.speed_tol]),
    }


def save_policy_set(directory: str, policy_set: PolicySet) -> tuple[bool, str]:
    """
    Write cf.npz and uf.npz for one alpha.

    Returns:
        tuple: (success: bool, message: str)
    """
    try:
        os.makedirs(directory, exist_ok=True)
        cf, uf = policy_set.cf, policy_set.uf
        cf_arrays = _common(policy_set, cf.success)
        cf_arrays.update(_grid_arrays(cf.qstack.grid, cf.action_set))
        cf_arrays.update(
            {
                "tables": cf.qstack.tables,
                "out_of_horizon": cf.qstack.out_of_horizon,
                "horizon_dt": np.array(cf.qstack.horizon_dt),
                "phi": np.array(cf.phi),
                "eps_cf": np.array(cf.eps_cf),
                "eta_sample_count": np.array(cf.eta_sample_count),
                "eta_sigma_floor": np.array(cf.eta_sigma_floor),
            }
        )
        uf_arrays = _common(policy_set, uf.success)
        uf_arrays.update(_grid_arrays(uf.grid, uf.action_set))
        uf_arrays.update({"values": uf.values, "q_values": uf.q_values, "policy": uf.policy})
        _write_npz(os.path.join(directory, CF_POLICY_FILE), cf_arrays)
        _write_npz(os.path.join(directory, UF_POLICY_FILE), uf_arrays)
        return True, f"Policies for alpha={policy_set.alpha} saved to {directory}"
    except PermissionError:
        return False, f"Permission denied: Cannot write to {directory}."
    except OSError as e:
        return False, f"Failed to save policies: {str(e)}"


def _read_npz(path: str, keys: tuple[str, ...]) -> dict[str, np.ndarray]:
    try:
        with np.load(path, allow_pickle=False) as archive:
            data = {name: archive[name] for name in archive.files}
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise PolicyFormatError(f"Cannot read policy file {path}: {e}") from e
    missing = [key for key in keys if key not in data]
    if missing:
        raise PolicyFormatError(f"Policy file {path} lacks: {', '.join(missing)}")
    version = int(data["version"])
    if version != POLICY_FORMAT_VERSION:
        raise PolicyFormatError(f"Unsupported policy format version {version} in {path}")
    return data


def _grid_and_actions(data: dict[str, np.ndarray]) -> tuple[InterpGrid, DiscreteActionSet]:
    grid = InterpGrid(tuple(data[f"knots_{i}"] for i in range(4)))
    action_set = DiscreteActionSet(
        tuple(float(v) for v in data["action_levels"]),
        tuple((int(i), int(j)) for i, j in data["action_pairs"]),
    )
    return grid, action_set


def read_fingerprint(directory: str) -> str | None:
    """Fingerprint stored with a policy set, or None if absent or unreadable."""
    try:
        data = _read_npz(os.path.join(directory, CF_POLICY_FILE), ("version", "fingerprint"))
        return str(data["fingerprint"])
    except PolicyFormatError:
        return None


def load_policy_set(directory: str) -> tuple[bool, PolicySet | None, str]:
    """
    Load cf.npz and uf.npz from a policy directory.

    Returns:
        tuple: (success: bool, policy set or None, message: str)
    """
    try:
        cf_data = _read_npz(os.path.join(directory, CF_POLICY_FILE), CF_KEYS)
        uf_data = _read_npz(os.path.join(directory, UF_POLICY_FILE), UF_KEYS)
        if str(cf_data["fingerprint"]) != str(uf_data["fingerprint"]):
            raise PolicyFormatError(f"CF and UF policies in {directory} do not match")

        grid, action_set = _grid_and_actions(cf_data)
        cf = CFPolicy(
            QStack(grid, cf_data["tables"], cf_data["out_of_horizon"], float(cf_data["horizon_dt"])),
            action_set,
            float(cf_data["phi"]),
            SuccessSet(*(float(v) for v in cf_data["success"])),
            float(cf_data["eps_cf"]),
            int(cf_data["eta_sample_count"]),
            float(cf_data["eta_sigma_floor"]),
        )
        uf_grid, uf_actions = _grid_and_actions(uf_data)
        uf = UFPolicy(
            uf_grid,
            uf_actions,
            uf_data["values"],
            uf_data["q_values"],
            uf_data["policy"],
            SuccessSet(*(float(v) for v in uf_data["success"])),
        )
        policy_set = PolicySet(float(cf_data["alpha"]), cf, uf, str(cf_data["fingerprint"]))
        return True, policy_set, f"Loaded policies from {directory}"
    except PolicyFormatError as e:
        logger.debug("Policy load failed for %s", directory, exc_info=True)
        return False, None, str(e)


def ensure_policies(
    config: ExperimentConfig,
    root: str,
    alphas,
    force: bool = False,
    build: bool = True,
) -> tuple[bool, dict[float, PolicySet], str]:
    """Load (building where missing or stale) the policy set for every alpha.

    Returns:
        tuple: (success: bool, policy sets by alpha, message: str)
    """
    policies: dict[float, PolicySet] = {}
    built = 0
    for alpha in alphas:
        directory = alpha_directory(root, alpha)
        expected = policy_fingerprint(config, alpha)
        if force or read_fingerprint(directory) != expected:
            if not build:
                return (
                    False,
                    policies,
                    f"Policy files for alpha={alpha} are missing or stale in {directory}; "
                    "run build-policies first",
                )
            ok, message = save_policy_set(directory, build_policy_set(config, alpha))
            if not ok:
                return False, policies, message
            built += 1
        else:
            logger.info("Policies for alpha=%s are up to date, skipping build", alpha)
        ok, policy_set, message = load_policy_set(directory)
        if not ok:
            return False, policies, message
        policies[alpha] = policy_set
    return True, policies, f"{len(policies)} policy set(s) ready, {built} built"
