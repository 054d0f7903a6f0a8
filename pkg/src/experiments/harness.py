"""
Experiment harness for the Shift Learning Lab.

An experiment is expanded into independent (cell, seed) jobs. Jobs run in a
process pool (or in-process with one worker); the parent collects every result
and is the only writer of output files.
"""
import re
import time
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd

from ..boolean.fourier import (
    BooleanJunta, ProductShift, prop31_sweep, prop31_pair_closed_form, decay_slope,
)
from ..learners.junta import (
    LayerwiseConfig, init_joint, run_layerwise, joint_sgd_train, represent_exact, figure1_target,
)
from ..learners.semiparametric import FlowConfig, init_network, run_algorithm2, holdout_mse, default_width
from ..learners.single_index import ParametricConfig, make_instance, run_algorithm1
from ..spectral.hermite import gauss_hermite_rule, small_ball_curve, small_ball_closed_form, fit_small_ball_exponent
from ..spectral.links import parse_link
from ..storage.results import ResultStore
from ..utils.errors import ConfigurationError, DegenerateShiftError, InsufficientWidthError
from ..utils.helpers import make_rng, merge_config, resolve_path
from .spec import ExperimentSpec, RunRecord

logger = logging.getLogger(__name__)

SECTIONS = {
    'smallball': ('smallball',),
    'parametric': ('parametric',),
    'semiparam': ('semiparametric',),
    'prop31': ('boolean', 'prop31'),
    'figure1': ('figure1',),
    'junta-layerwise': ('junta', 'layerwise'),
    'junta-joint': ('junta', 'joint'),
}
ARMS = ('shifted', 'control')
DEFAULT_SUCCESS_OVERLAP = 0.8

# Stream keys of make_rng
_MU_STREAM = 11
_SEED_STREAM = 12
_HOLDOUT_STREAM = 13


class CellResult(NamedTuple):
    index: int
    labels: dict
    seed: int
    metrics: dict
    rows: Optional[list]
    trace: Optional[pd.DataFrame]
    checkpoint: Optional[dict]
    wall_time_s: float
    status: str
    error: Optional[str] = None


class ExperimentOutcome(NamedTuple):
    spec: ExperimentSpec
    records: list
    table: pd.DataFrame
    summary: Optional[pd.DataFrame]
    failed: int


class ShiftComparison(NamedTuple):
    summary: dict
    runs: pd.DataFrame


def resolve_parameters(kind, config, parameters):
    """
    Overlay experiment parameters on the defaults of the kind's config section.

    Args:
        kind (str): Experiment kind
        config (dict): Application configuration
        parameters (dict): Experiment parameters

    Returns:
        dict: Resolved parameters
    """
    if kind not in SECTIONS:
        raise ConfigurationError(f"unknown experiment kind {kind!r}")
    section = config or {}
    for key in SECTIONS[kind]:
        section = section.get(key, {}) or {}
    return merge_config(section, parameters or {})


def derived_seed(seed, *keys):
    """Integer seed for one labelled stream of a run seed."""
    return int(make_rng(seed, _SEED_STREAM, *keys).integers(0, 2 ** 31 - 1))


def _eta_key(eta):
    return int(round(float(eta) * 1e6))


def _as_list(value):
    if value is None:
        return []
    return list(value) if isinstance(value, (list, tuple)) else [value]


def parse_target(target, d):
    """
    Build a junta target from its experiment-file description.

    Accepted forms: `pair` (x_0 x_1), `figure1`, `parity:k` (x_0 ... x_{k-1}),
    a `{d, support, table}` mapping, or a path to a JSON file in that format.

    Args:
        target (str or dict): Description
        d (int): Ambient dimension

    Returns:
        BooleanJunta: The target
    """
    if target is None or target == 'pair':
        return BooleanJunta.from_function(d, (0, 1), lambda s: s[0] * s[1])
    if isinstance(target, dict):
        f = BooleanJunta.from_dict(target)
    elif target == 'figure1':
        return figure1_target(d)
    elif isinstance(target, str) and target.startswith('parity:'):
        k = int(target.split(':', 1)[1])
        return BooleanJunta.from_function(d, range(k), lambda s: float(np.prod(s)))
    elif isinstance(target, str) and target.endswith('.json'):
        with open(resolve_path(target), 'r') as file:
            f = BooleanJunta.from_json(file.read())
    else:
        raise ConfigurationError(f"unknown junta target {target!r}")
    if f.dimension_d != d:
        raise ConfigurationError(f"target dimension {f.dimension_d} does not match d={d}")
    return f


def _is_pair(f):
    return f.k == 2 and np.allclose(f.truth_table, [1.0, -1.0, -1.0, 1.0])


def _subsample(values, stride, column):
    values = np.asarray(values)
    steps = np.unique(np.r_[np.arange(0, values.size, max(int(stride), 1)), values.size - 1])
    return pd.DataFrame({'step': steps, column: values[steps]})


# Cell runners: (params, labels, seed) -> (metrics, rows, trace, checkpoint)

def _smallball_cell(params, labels, seed):
    link = parse_link(labels['link'])
    rule = gauss_hermite_rule(int(params.get('quadrature_order', 64)))
    curve = small_ball_curve(link, params.get('lambdas', [0.05, 0.1, 0.2, 0.4, 0.8]),
                             int(params.get('n_samples', 100000)), seed, rule)
    oracle = [small_ball_closed_form(link, lam) for lam in curve['lambda']]
    curve['closed_form'] = [np.nan if value is None else value for value in oracle]
    with np.errstate(divide='ignore', invalid='ignore'):
        z = np.abs(curve['estimate'] - curve['closed_form']) / curve['std_error']
    fit = fit_small_ball_exponent(curve['lambda'], curve['estimate'])
    metrics = {'slope': fit['slope'], 'n_points': fit['n_points'],
               'max_z': float(np.nanmax(z.replace(np.inf, np.nan))) if z.notna().any() else float('nan')}
    return metrics, curve.drop(columns=['seed']).to_dict('records'), None, None


def _parametric_cell(params, labels, seed):
    d = int(params['d'])
    inst = make_instance(d, params.get('link', 'hermite:3'), seed, shifted=labels['arm'] == 'shifted',
                         noise_sigma=float(params.get('noise_sigma', 0.1)))
    cfg = ParametricConfig.from_config({'parametric': params}, d, seed=seed)
    run = run_algorithm1(inst, cfg)
    final = float(run.overlap_trace[-1])
    metrics = {
        'initial_overlap': float(run.overlap_trace[0]),
        'step1_overlap': run.step1_overlap,
        'final_overlap': final,
        'sign': 1.0 if run.sign == 'plus' else -1.0,
        'eta_step1': run.eta_step1,
        'floor': run.floor,
        'success': float(final >= float(params.get('success_overlap', DEFAULT_SUCCESS_OVERLAP))),
    }
    return metrics, None, _subsample(run.overlap_trace, params.get('trace_stride', 100), 'overlap'), None


def _semiparam_cell(params, labels, seed):
    d, n = int(params['d']), int(params['n'])
    inst = make_instance(d, params.get('link', 'hermite:2'), seed, shifted=labels['arm'] == 'shifted',
                         noise_sigma=float(params.get('noise_sigma', 0.1)))
    cfg = FlowConfig.from_config({'semiparametric': params}, seed=seed)
    K = int(params.get('width') or default_width(n, d))
    alpha = inst.shift_alpha
    initial = init_network(d, K, cfg, alpha)
    _, net, trace = run_algorithm2(inst, K, cfg, n)
    metrics = {
        'width': K,
        'initial_overlap': float(trace[0]),
        'final_overlap': float(trace[-1]),
        'holdout_mse': holdout_mse(net, inst, int(params.get('holdout_size', 10000)),
                                   derived_seed(seed, _HOLDOUT_STREAM)),
        'conservation_gap': float(np.max(np.abs(net.coupled_bias(alpha) - initial.coupled_bias(alpha)))),
        'success': float(trace[-1] >= float(params.get('success_overlap', DEFAULT_SUCCESS_OVERLAP))),
    }
    checkpoint = {'second_layer_c': net.second_layer_c, 'biases_tau': net.biases_tau,
                  'signs_s': net.signs_s, 'direction_theta': net.direction_theta}
    return metrics, None, _subsample(trace, params.get('trace_stride', 10), 'overlap'), checkpoint


def _prop31_cell(params, labels, seed):
    d = int(params.get('d', 2))
    f = parse_target(params.get('target', 'pair'), d)
    eta = float(params.get('eta', 0.5))
    table = prop31_sweep(f, eta, params.get('epsilon_grid', [0.02, 0.05, 0.1, 0.2, 0.4]),
                         int(params.get('n_mu', 10000)), seed)
    metrics = {f'slope_{j}': decay_slope(table, j) for j in f.support_T}
    if _is_pair(f):
        table['closed_form'] = [prop31_pair_closed_form(eta, eps) for eps in table['epsilon']]
        se = table['std_error'].where(table['std_error'] > 0)
        metrics['max_z'] = float(np.nanmax(np.abs(table['estimate'] - table['closed_form']) / se)) \
            if se.notna().any() else float('nan')
    return metrics, table.to_dict('records'), None, None


def _joint_run(f, d, eta, params, seed, threshold):
    rng = make_rng(seed, _MU_STREAM, d, _eta_key(eta))
    shift = ProductShift.uniform(d, float(eta), rng)
    net = init_joint(d, int(params.get('width', 512)), rng)
    max_epochs = int(params.get('max_epochs', 400))
    _, trace = joint_sgd_train(
        net, f, shift,
        batch=int(params.get('batch', 64)),
        rate=float(params.get('rate', 0.05)),
        epochs=max_epochs,
        seed=derived_seed(seed, d, _eta_key(eta)),
        batches_per_epoch=int(params.get('batches_per_epoch', 100)),
        test_size=int(params.get('test_size', 10000)),
        stop_below=threshold,
    )
    final = float(trace['test_error'].iloc[-1])
    censored = threshold is None or final >= threshold
    if censored and threshold is not None:
        logger.warning(f"joint run d={d} eta={eta} seed={seed} censored at {max_epochs} epochs (error {final:.4g})")
    metrics = {
        'epochs': max_epochs if censored else int(trace['epoch'].iloc[-1]),
        'censored': bool(censored),
        'final_test_error': final,
    }
    return metrics, trace


def _figure1_cell(params, labels, seed):
    d = int(labels['d'])
    metrics, trace = _joint_run(figure1_target(d), d, labels['eta'], params, seed,
                                float(params.get('threshold', 1e-2)))
    return metrics, None, trace, None


def _joint_cell(params, labels, seed):
    d = int(params['d'])
    threshold = params.get('threshold')
    metrics, trace = _joint_run(parse_target(params.get('target', 'figure1'), d), d, labels['eta'], params, seed,
                                None if threshold is None else float(threshold))
    return metrics, None, trace, None


def _layerwise_cell(params, labels, seed):
    d = int(params['d'])
    f = parse_target(params.get('target', 'pair'), d)
    eta = float(labels['eta'])
    shift = ProductShift.uniform(d, eta, make_rng(seed, _MU_STREAM, d, _eta_key(eta)))
    known = {k: v for k, v in params.items() if k in LayerwiseConfig.__dataclass_fields__}
    cfg = LayerwiseConfig.from_config({'junta': {'layerwise': known}}, seed=seed)
    run = run_layerwise(f, shift, cfg, int(params.get('width', 256)), int(params.get('test_size', 10000)),
                        params.get('loss', 'squared'))
    try:
        rep = represent_exact(f, run.alphas, cfg.first_rate_gamma, -run.net.biases_b, cfg.bias_range_L)
        representable, max_weight = True, rep.max_weight
    except (DegenerateShiftError, InsufficientWidthError) as e:
        logger.debug(f"no exact representation for seed={seed}, eta={eta}: {e}")
        representable, max_weight = False, float('nan')
    metrics = {
        'test_mse': run.test_mse,
        'test_mse_last': run.test_mse_last,
        'separation': run.separation,
        'representable': representable,
        'max_weight': max_weight,
        'success': bool(run.test_mse <= float(params.get('success_mse', 0.05))),
    }
    checkpoint = {'first_layer_W': run.net.first_layer_W, 'second_layer_a': run.net.second_layer_a,
                  'biases_b': run.net.biases_b}
    return metrics, None, _subsample(run.loss_trace, params.get('trace_stride', 100), 'batch_loss'), checkpoint


CELL_RUNNERS = {
    'smallball': _smallball_cell,
    'parametric': _parametric_cell,
    'semiparam': _semiparam_cell,
    'prop31': _prop31_cell,
    'figure1': _figure1_cell,
    'junta-layerwise': _layerwise_cell,
    'junta-joint': _joint_cell,
}


def plan_cells(kind, params, seeds):
    """
    Expand an experiment into (labels, seed) jobs.

    Args:
        kind (str): Experiment kind
        params (dict): Resolved parameters
        seeds (list): Run seeds

    Returns:
        list: (labels dict, seed) pairs in output order
    """
    if kind == 'smallball':
        grid = [{'link': link} for link in _as_list(params.get('links', ['hermite:2', 'hermite:3', 'relu']))]
    elif kind in ('parametric', 'semiparam'):
        grid = [{'arm': arm} for arm in _as_list(params.get('arms', list(ARMS)))]
    elif kind == 'figure1':
        grid = [{'d': int(d), 'eta': float(eta)}
                for d in _as_list(params.get('d_list')) for eta in _as_list(params.get('eta_list'))]
    elif kind in ('junta-layerwise', 'junta-joint'):
        grid = [{'eta': float(eta)} for eta in _as_list(params.get('eta', 0.5))]
    else:
        grid = [{}]
    if not grid:
        raise ConfigurationError(f"{kind} experiment has an empty parameter grid")
    return [(dict(labels), int(seed)) for labels in grid for seed in seeds]


def execute_cell(kind, params, labels, seed, index=0):
    """
    Run one job; failures are reported in the result instead of raised.

    Args:
        kind (str): Experiment kind
        params (dict): Resolved parameters
        labels (dict): Cell labels
        seed (int): Run seed
        index (int): Position in the job list

    Returns:
        CellResult: Metrics, table rows, trace and checkpoint of the job
    """
    start = time.perf_counter()
    try:
        metrics, rows, trace, checkpoint = CELL_RUNNERS[kind](params, labels, seed)
        status, error = 'completed', None
    except Exception as e:
        logger.exception(f"{kind} cell {labels} seed={seed} failed: {str(e)}")
        metrics, rows, trace, checkpoint = {}, None, None, None
        status, error = 'failed', f"{type(e).__name__}: {e}"
    metrics = {k: (v.item() if isinstance(v, np.generic) else v) for k, v in metrics.items()}
    return CellResult(index, labels, seed, metrics, rows, trace, checkpoint,
                      time.perf_counter() - start, status, error)


def run_cells(kind, params, cells, workers=1):
    """
    Run jobs in a process pool, or in-process with one worker.

    Args:
        kind (str): Experiment kind
        params (dict): Resolved parameters
        cells (list): (labels, seed) jobs
        workers (int): Pool size

    Returns:
        list: CellResult objects in job order
    """
    results = [None] * len(cells)
    if workers <= 1 or len(cells) == 1:
        for index, (labels, seed) in enumerate(cells):
            results[index] = execute_cell(kind, params, labels, seed, index)
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {
                executor.submit(execute_cell, kind, params, labels, seed, index): index
                for index, (labels, seed) in enumerate(cells)
            }
            for done, future in enumerate(as_completed(futures), start=1):
                results[futures[future]] = future.result()
                logger.debug(f"{kind}: {done}/{len(cells)} cells finished")
    logger.info(f"{kind}: {sum(r.status == 'completed' for r in results)}/{len(results)} cells completed")
    return results


def results_table(results):
    """Long-format table of completed jobs: labels, seed, then rows or metrics."""
    rows = []
    for result in results:
        if result.status != 'completed':
            continue
        for row in (result.rows if result.rows is not None else [result.metrics]):
            rows.append({**result.labels, 'seed': result.seed, **row})
    return pd.DataFrame(rows)


def cell_name(labels, seed):
    parts = [f"{key}{value}" for key, value in labels.items()] + [f"seed{seed}"]
    return re.sub(r'[^A-Za-z0-9.]+', '-', '_'.join(parts))


# Summaries

def shift_advantage_summary(table, success_overlap=DEFAULT_SUCCESS_OVERLAP):
    """
    Paired comparison of the shifted and control arms.

    Args:
        table (pandas.DataFrame): One row per (arm, seed) with overlap columns
        success_overlap (float): Final overlap counted as success

    Returns:
        dict: Medians, paired differences and success rates
    """
    paired = table.pivot(index='seed', columns='arm', values='final_overlap').dropna()
    shifted = table[table['arm'] == 'shifted'].set_index('seed')
    control = table[table['arm'] == 'control'].set_index('seed')
    summary = {
        'n_pairs': int(len(paired)),
        'median_final_shifted': float(shifted['final_overlap'].abs().median()),
        'median_final_control': float(control['final_overlap'].abs().median()),
        'mean_paired_difference': float((paired['shifted'].abs() - paired['control'].abs()).mean())
        if {'shifted', 'control'} <= set(paired.columns) else float('nan'),
        'success_rate_shifted': float((shifted['final_overlap'] >= success_overlap).mean()),
        'success_rate_control': float((control['final_overlap'] >= success_overlap).mean()),
        'benchmark': 0.5,
    }
    if 'step1_overlap' in table.columns:
        summary['median_step1_shifted'] = float(shifted['step1_overlap'].abs().median())
        summary['median_step1_control'] = float(control['step1_overlap'].abs().median())
    positive = shifted[shifted['initial_overlap'] > 0]
    summary['conditional_success_shifted'] = float((positive['final_overlap'] >= success_overlap).mean()) \
        if len(positive) else float('nan')
    return summary


def summarize_figure1(table):
    """
    Median epochs and censoring rate per (d, eta), with a monotonicity flag per d.

    Censored runs enter the median at max_epochs. The flag checks that the
    median is nonincreasing in eta over the positive shift ranges.

    Args:
        table (pandas.DataFrame): Output of run_figure1

    Returns:
        pandas.DataFrame: Columns d, eta, runs, median_epochs, censored_rate, monotone_in_eta
    """
    summary = (table.groupby(['d', 'eta'])
               .agg(runs=('seed', 'size'), median_epochs=('epochs', 'median'),
                    censored_rate=('censored', 'mean'))
               .reset_index())
    flags = {}
    for d, group in summary[summary['eta'] > 0].groupby('d'):
        medians = group.sort_values('eta')['median_epochs'].to_numpy()
        flags[d] = bool(np.all(np.diff(medians) <= 0))
    summary['monotone_in_eta'] = summary['d'].map(flags).fillna(True).astype(bool)
    return summary


def _summarize(kind, table, params):
    if table.empty:
        return None
    if kind == 'smallball':
        return (table.groupby(['link', 'lambda'])
                .agg(estimate=('estimate', 'mean'), closed_form=('closed_form', 'first'), runs=('seed', 'size'))
                .reset_index())
    if kind in ('parametric', 'semiparam'):
        if 'step1_overlap' not in table.columns:
            table = table.assign(step1_overlap=np.nan)
        summary = shift_advantage_summary(table, float(params.get('success_overlap', DEFAULT_SUCCESS_OVERLAP)))
        return pd.DataFrame([summary])
    if kind == 'prop31':
        return (table.groupby(['j', 'epsilon'])
                .agg(estimate=('estimate', 'mean'), std_error=('std_error', 'mean'), runs=('seed', 'size'))
                .reset_index())
    if kind == 'figure1':
        return summarize_figure1(table)
    if kind == 'junta-layerwise':
        return (table.groupby('eta')
                .agg(runs=('seed', 'size'), success_rate=('success', 'mean'),
                     median_test_mse=('test_mse', 'median'), representable_rate=('representable', 'mean'))
                .reset_index())
    return (table.groupby('eta')
            .agg(runs=('seed', 'size'), median_final_error=('final_test_error', 'median'),
                 median_epochs=('epochs', 'median'), censored_rate=('censored', 'mean'))
            .reset_index())


def run_experiment(spec, config=None, workers=None):
    """
    Run every cell of an experiment and write its outputs.

    Args:
        spec (ExperimentSpec): Experiment
        config (dict): Application configuration supplying defaults
        workers (int): Pool size, `harness.workers` when omitted

    Returns:
        ExperimentOutcome: Records, long-format table, summary and failure count
    """
    config = config or {}
    params = resolve_parameters(spec.kind, config, spec.parameters)
    workers = int(workers or config.get('harness', {}).get('workers', 1))
    cells = plan_cells(spec.kind, params, spec.seeds)
    logger.info(f"Running {spec.kind} experiment {spec.spec_hash[:12]}: {len(cells)} cells on {workers} worker(s)")

    results = run_cells(spec.kind, params, cells, workers)
    table = results_table(results)
    summary = _summarize(spec.kind, table, params)

    records = []
    with ResultStore(spec.output_dir, spec.spec_hash) as store:
        for result in results:
            name = cell_name(result.labels, result.seed)
            paths = []
            if result.trace is not None:
                paths.append(str(store.write_table(f"trace_{name}", result.trace)))
            if result.checkpoint:
                paths.append(str(store.save_checkpoint(f"model_{name}", result.checkpoint)))
            records.append(RunRecord(spec.spec_hash, result.seed, result.metrics, paths, result.wall_time_s,
                                     result.labels, result.status))
        store.write_table(spec.kind, table)
        if summary is not None:
            store.write_table(f"{spec.kind}_summary", summary)
        store.write_records(records)
        store.index_runs(records, spec.kind)

    failed = sum(r.status != 'completed' for r in results)
    if failed:
        logger.error(f"{failed} of {len(results)} cells failed")
    return ExperimentOutcome(spec, records, table, summary, failed)


# Direct entry points

def run_figure1(d_list, eta_list, width, batch, threshold, max_epochs, seeds, rate=0.05, batches_per_epoch=100,
                test_size=10000, workers=1):
    """
    Epochs-to-threshold of joint SGD on the three-monomial target over a (d, eta) grid.

    Args:
        d_list (list): Dimensions
        eta_list (list): Shift ranges
        width (int): Hidden units
        batch (int): Mini-batch size
        threshold (float): Test error to reach
        max_epochs (int): Censoring point
        seeds (list): Seeds
        rate (float): SGD step size
        batches_per_epoch (int): Mini-batches per epoch
        test_size (int): Test samples per evaluation
        workers (int): Pool size

    Returns:
        pandas.DataFrame: Columns d, eta, seed, epochs, censored, final_test_error
    """
    params = {'d_list': d_list, 'eta_list': eta_list, 'width': width, 'batch': batch, 'threshold': threshold,
              'max_epochs': max_epochs, 'rate': rate, 'batches_per_epoch': batches_per_epoch,
              'test_size': test_size}
    return results_table(run_cells('figure1', params, plan_cells('figure1', params, seeds), workers))


def run_smallball_sweep(link_names, lambdas, n_samples, seeds, quadrature_order=64, workers=1):
    """
    Small-ball estimates per link with the closed-form values alongside.

    Args:
        link_names (list): Link names
        lambdas (list): Radii
        n_samples (int): Shift draws per estimate
        seeds (list): Seeds
        quadrature_order (int): Gauss-Hermite order
        workers (int): Pool size

    Returns:
        pandas.DataFrame: Columns link, seed, lambda, estimate, std_error, n_samples, closed_form
    """
    params = {'links': list(link_names), 'lambdas': list(lambdas), 'n_samples': n_samples,
              'quadrature_order': quadrature_order}
    return results_table(run_cells('smallball', params, plan_cells('smallball', params, seeds), workers))


def compare_shift_advantage(link, d, budget, seeds, config=None, workers=1, **overrides):
    """
    Paired runs of the two-stage learner with a random shift and without.

    Args:
        link (str): Link name
        d (int): Dimension
        budget (int): Step-two sample count
        seeds (list): Seeds; both arms of a pair share w*, theta_0 and the data seeds
        config (dict): Application configuration supplying defaults
        workers (int): Pool size
        **overrides: Further parametric settings

    Returns:
        ShiftComparison: Summary dict and the per-run table
    """
    params = resolve_parameters('parametric', config, {'link': link, 'd': d, 'n_step2': budget, **overrides})
    runs = results_table(run_cells('parametric', params, plan_cells('parametric', params, seeds), workers))
    summary = shift_advantage_summary(runs, float(params.get('success_overlap', DEFAULT_SUCCESS_OVERLAP)))
    logger.info(f"shift advantage {link} d={d}: median final |m| {summary['median_final_shifted']:.3f} "
                f"vs {summary['median_final_control']:.3f}")
    return ShiftComparison(summary, runs)
