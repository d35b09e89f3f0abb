import logging
from pathlib import Path

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
from src.models.config import write_manifest
from src.models.convolution import make_operator
from src.models.diagnostics import all_converged, psrf_summary, psrf_table, write_psrf_csv
from src.models.errors import SamplerAborted
from src.models.estimators import PosteriorEstimates, align_chains, estimate_posterior
from src.models.gibbs import (
    LABEL_ORDERS,
    ModelHyperparams,
    SamplerConfig,
    describe_config,
    merge_accumulators,
    run_chains,
)
from src.models.grid import read_labels, read_matrix, write_csv, write_labels, write_matrix
from src.models.logging_setup import progress_enabled

logger = logging.getLogger(__name__)


def write_scalars_csv(path: Path, estimates: PosteriorEstimates) -> None:
    lines = ['variable,mean,std']
    for name, est in estimates.scalars.items():
        lines.append(f"{name},{est.mean!r},{est.std!r}")
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')


def dump_aborted_state(out: Path, error: SamplerAborted) -> None:
    values = {'move': error.move, 'error': str(error).replace('\n', ' ')}
    if error.state is not None:
        summary = error.state.summary()
        values.update({f'state.{k}': v for k, v in summary.items()})
        if summary['x_finite']:
            write_matrix(out / 'x_at_abort.gpdm', error.state.image())
    write_manifest(out / 'diagnostics.txt', values)


@click.command('run')
@click.option('--obs', required=True, type=click.Path(exists=True, dir_okay=False), help='Observation y (.gpdm).')
@click.option('--psf', required=True, type=click.Path(exists=True, dir_okay=False), help='Point spread function (.gpdm).')
@click.option('--k', 'k_classes', type=int, default=2, show_default=True, help='Number of tissue classes.')
@click.option('--iters', type=int, default=6000, show_default=True, help='Total Gibbs iterations.')
@click.option('--burnin', type=int, default=2000, show_default=True, help='Burn-in iterations.')
@click.option('--chains', type=int, default=1, show_default=True, help='Independent chains, one thread each.')
@click.option('--seed', type=int, default=0, show_default=True)
@click.option('--beta', type=float, default=1.0, show_default=True, help='Potts granularity.')
@click.option('--alpha', type=float, default=0.1, show_default=True, help='Noise hyperprior shape.')
@click.option('--nu', type=float, default=0.1, show_default=True, help='Noise hyperprior scale.')
@click.option('--leapfrog-min', type=int, default=50, show_default=True)
@click.option('--leapfrog-max', type=int, default=70, show_default=True)
@click.option('--eps-init', type=float, default=1e-5, show_default=True, help='Initial HMC step size.')
@click.option('--delta-init', type=float, default=0.05, show_default=True, help='Initial RWMH proposal variance.')
@click.option('--adapt-window', type=int, default=100, show_default=True)
@click.option('--paper-exact-ratio', '--omit-hastings-term', 'omit_hastings_term', is_flag=True,
              help='Drop the truncated-proposal Hastings term.')
@click.option('--paper-adapt-direction', '--inverted-adaptation', 'inverted_adaptation', is_flag=True,
              help='Swap the step-size adaptation direction.')
@click.option('--label-order', type=click.Choice(LABEL_ORDERS), default='raster', show_default=True)
@click.option('--lenient', is_flag=True, help='Fall back to the unconditioned mean for unvisited pixels.')
@click.option('--labels', 'labels_path', type=click.Path(exists=True, dir_okay=False),
              help='Known labels (.gpdl); deconvolution only.')
@click.option('--bins', type=int, default=30, show_default=True, help='Histogram bins per scalar.')
@click.option('--out', 'out_dir', required=True, type=click.Path(file_okay=False), help='Output directory.')
@handle_errors
def run(obs, psf, k_classes, iters, burnin, chains, seed, beta, alpha, nu, leapfrog_min, leapfrog_max,
        eps_init, delta_init, adapt_window, omit_hastings_term, inverted_adaptation, label_order,
        lenient, labels_path, bins, out_dir):
    """Sample the joint deconvolution / segmentation posterior."""
    if chains < 1:
        raise click.BadParameter('need at least one chain', param_hint='--chains')
    y = read_matrix(obs)
    kernel = read_matrix(psf)
    fixed_labels = read_labels(labels_path) if labels_path else None
    if fixed_labels is not None and fixed_labels.k_classes != k_classes:
        raise click.BadParameter(f'label file has K={fixed_labels.k_classes}, --k is {k_classes}',
                                 param_hint='--labels')

    hyper = ModelHyperparams(alpha=alpha, nu=nu, beta=beta, k_classes=k_classes)
    config = SamplerConfig(
        n_iter=iters, n_burnin=burnin, leapfrog_min=leapfrog_min, leapfrog_max=leapfrog_max,
        eps_init=eps_init, delta_init=delta_init, adapt_window=adapt_window, seed=seed,
        omit_hastings_term=omit_hastings_term, inverted_adaptation=inverted_adaptation,
        label_order=label_order, progress=progress_enabled(),
    )
    op = make_operator(kernel, y.dims)

    with output_dir(out_dir) as out:
        manifest = {
            'command': 'run',
            'input.obs': str(Path(obs).resolve()),
            'input.psf': str(Path(psf).resolve()),
            'input.labels': str(Path(labels_path).resolve()) if labels_path else '',
            'run.chains': chains,
            'run.bins': bins,
            'run.lenient': lenient,
            'run.label_switching': 'permutation-aligned evaluation',
            'run.chain_alignment': 'MAP-label overlap with chain 0',
        }
        manifest.update(describe_config(hyper, config))
        manifest.update(package_versions())
        click.echo(f"🔬 sampling {chains} chain(s), {iters} iterations, K={k_classes} "
                   f"on {y.rows}x{y.cols}")
        try:
            results = run_chains(y, op, hyper, config, n_chains=chains, fixed_labels=fixed_labels)
        except SamplerAborted as e:
            dump_aborted_state(out, e)
            write_manifest(out / MANIFEST_NAME, manifest)
            fail(f"SamplerAborted: {e} (state dumped to {out / 'diagnostics.txt'})", EXIT_NUMERIC)

        results = align_chains(results)
        acc = merge_accumulators(results)
        estimates = estimate_posterior(acc, [r.traces for r in results], n_bins=bins, lenient=lenient)

        write_matrix(out / 'x_hat.gpdm', estimates.x_hat)
        write_labels(out / 'z_hat.gpdl', estimates.z_hat)
        write_csv(out / 'x_hat.csv', estimates.x_hat)
        write_csv(out / 'z_hat.csv', estimates.z_hat)
        write_scalars_csv(out / 'scalars.csv', estimates)
        for result in results:
            result.traces.write_csv(out / f'traces_chain{result.stream_id}.csv')
        for name, hist in estimates.histograms.items():
            hist.write_csv(out / f'hist_{name}.csv')

        warnings = []
        if chains >= 2:
            rows = psrf_table([r.traces for r in results])
            write_psrf_csv(out / 'psrf.csv', rows)
            manifest.update({f'psrf.{name}': value for name, value in psrf_summary(rows).items()})
            if not all_converged(rows):
                failed = [row.variable for row in rows if not row.passed]
                warnings.append(f"PSRF >= 1.2 (or undefined) for {', '.join(failed)}")
        if estimates.fallback_pixels:
            warnings.append(f"{estimates.fallback_pixels} pixel(s) used the unconditioned-mean fallback")

        manifest.update({
            'result.retained_per_chain': config.n_retained,
            'result.sigma2_hat': estimates.sigma2_hat,
            'result.xi_hat': [p.xi for p in estimates.classes],
            'result.gamma_hat': [p.gamma for p in estimates.classes],
            'result.fallback_pixels': estimates.fallback_pixels,
            'result.label_ties': estimates.label_ties,
            'result.hmc_acceptance': acc.hmc_accepted / max(acc.hmc_attempts, 1),
            'result.hmc_nonfinite': acc.hmc_nonfinite,
            'result.rwmh_numeric_rejections': acc.rwmh_numeric,
            'result.final_hmc_eps': [r.final_state.hmc_eps for r in results],
            'cost.fft_forward': op.forward_calls,
            'cost.fft_adjoint': op.adjoint_calls,
            'cost.leapfrog_steps': sum(r.leapfrog_steps for r in results),
            'warnings': len(warnings),
        })
        write_manifest(out / MANIFEST_NAME, manifest)

    for message in warnings:
        warn(message)
    ok(f"estimates written to {out_dir} (sigma2 = {estimates.sigma2_hat:.4g})")
    if warnings:
        raise SystemExit(EXIT_WARNINGS)
