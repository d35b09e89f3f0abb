import logging

import click

from src.commands.common import handle_errors, ok, output_file
from src.models.errors import GridFormatError
from src.models.grid import RegionMask, read_labels, read_matrix
from src.models.metrics import RG_THRESHOLD, compute_report

logger = logging.getLogger(__name__)

existing_file = click.Path(exists=True, dir_okay=False)


@click.command('metrics')
@click.option('--truth', type=existing_file, help='Ground-truth TRF x (.gpdm).')
@click.option('--labels', type=existing_file, help='Ground-truth labels z (.gpdl).')
@click.option('--obs', type=existing_file, help='Observation y (.gpdm).')
@click.option('--est', required=True, type=existing_file, help='Estimated TRF (.gpdm).')
@click.option('--est-labels', type=existing_file, help='Estimated labels (.gpdl).')
@click.option('--cnr-region', nargs=2, type=str, default=None,
              help='Two regions as "row,col,height,width".')
@click.option('--rg-threshold', type=float, default=RG_THRESHOLD, show_default=True)
@click.option('--report', 'report_path', type=click.Path(dir_okay=False), help='Write the report as CSV.')
@handle_errors
def metrics(truth, labels, obs, est, est_labels, cnr_region, rg_threshold, report_path):
    """Quality metrics of an estimate against whatever references are given."""
    if (labels is None) != (est_labels is None):
        raise click.UsageError('--labels and --est-labels must be given together')
    x_hat = read_matrix(est)
    x = read_matrix(truth) if truth else None
    y = read_matrix(obs) if obs else None
    z_true = read_labels(labels) if labels else None
    z_hat = read_labels(est_labels) if est_labels else None
    regions = None
    if cnr_region:
        try:
            regions = tuple(RegionMask.parse(text) for text in cnr_region)
        except (ValueError, GridFormatError) as e:
            raise click.BadParameter(str(e), param_hint='--cnr-region')

    report = compute_report(x_hat, y=y, x=x, z_true=z_true, z_hat=z_hat, cnr_regions=regions,
                            rg_threshold=rg_threshold)
    if not report.as_dict():
        raise click.UsageError('nothing to compute: add --truth, --obs, --labels/--est-labels or --cnr-region')
    click.echo(report.to_text())
    if report_path:
        with output_file(report_path) as target:
            report.write_csv(target)
        ok(f"report written to {report_path}")
