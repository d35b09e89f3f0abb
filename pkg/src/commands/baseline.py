import logging

import click

from src.commands.common import (
    EXIT_NUMERIC,
    EXIT_WARNINGS,
    MANIFEST_NAME,
    fail,
    handle_errors,
    ok,
    output_dir,
    package_versions,
    warn,
)
from src.models.baselines import auto_lambda, l1_deconvolve, l2_deconvolve
from src.models.config import write_manifest
from src.models.convolution import make_operator
from src.models.errors import ConvergenceError
from src.models.grid import read_matrix, write_csv, write_matrix

logger = logging.getLogger(__name__)


def parse_lambda(text: str) -> str:
    if text == 'auto':
        return text
    try:
        value = float(text)
    except ValueError:
        raise click.BadParameter(f"expected a number or 'auto', got {text!r}", param_hint='--lambda')
    if not value > 0.0:
        raise click.BadParameter('must be > 0', param_hint='--lambda')
    return text


@click.command('baseline')
@click.option('--obs', required=True, type=click.Path(exists=True, dir_okay=False), help='Observation y (.gpdm).')
@click.option('--psf', required=True, type=click.Path(exists=True, dir_okay=False), help='Point spread function (.gpdm).')
@click.option('--method', type=click.Choice(['l2', 'l1']), default='l2', show_default=True)
@click.option('--lambda', 'lam', default='0.1', show_default=True,
              callback=lambda ctx, param, value: parse_lambda(value),
              help="Regularisation weight, or 'auto' for 0.1 * max|H^T y|.")
@click.option('--max-iter', type=int, default=500, show_default=True, help='l1 iteration cap.')
@click.option('--tol', type=float, default=1e-6, show_default=True, help='l1 relative objective tolerance.')
@click.option('--fista', is_flag=True, help='Use Nesterov-accelerated shrinkage for l1.')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False), help='Output directory.')
@handle_errors
def baseline(obs, psf, method, lam, max_iter, tol, fista, out_dir):
    """Classical l2 / l1 regularised deconvolution."""
    y = read_matrix(obs)
    op = make_operator(read_matrix(psf), y.dims)
    lam_value = auto_lambda(y, op) if lam == 'auto' else float(lam)

    converged = True
    with output_dir(out_dir) as out:
        manifest = {'command': 'baseline', 'method': method, 'lambda': lam_value, 'lambda_rule': lam}
        if method == 'l2':
            x_hat = l2_deconvolve(y, op, lam_value)
        else:
            manifest.update({'max_iter': max_iter, 'tol': tol, 'fista': fista})
            try:
                result = l1_deconvolve(y, op, lam_value, max_iter=max_iter, tol=tol, accelerated=fista)
            except ConvergenceError as e:
                if e.iterate is not None:
                    write_matrix(out / 'x_at_divergence.gpdm', e.iterate)
                fail(f"ConvergenceError: {e}", EXIT_NUMERIC)
            result.write_trace_csv(out / 'objective.csv')
            manifest.update({'iterations': result.iterations, 'converged': result.converged,
                             'objective_final': result.objective[-1]})
            x_hat = result.x
            converged = result.converged
        write_matrix(out / 'x_hat.gpdm', x_hat)
        write_csv(out / 'x_hat.csv', x_hat)
        manifest.update(package_versions())
        write_manifest(out / MANIFEST_NAME, manifest)

    ok(f"{method} estimate (lambda = {lam_value:.4g}) written to {out_dir}")
    if not converged:
        warn(f"l1 solver hit --max-iter {max_iter} before reaching --tol {tol}")
        raise SystemExit(EXIT_WARNINGS)
