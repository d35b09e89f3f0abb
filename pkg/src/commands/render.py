import click

from src.commands.common import handle_errors, ok, output_file
from src.models.display import DEFAULT_DYNAMIC_RANGE_DB, bmode_render
from src.models.grid import read_matrix, write_csv, write_matrix


@click.command('render')
@click.option('--in', 'in_path', required=True, type=click.Path(exists=True, dir_okay=False),
              help='Grid to display (.gpdm).')
@click.option('--dr', type=float, default=DEFAULT_DYNAMIC_RANGE_DB, show_default=True,
              help='Displayed dynamic range in dB.')
@click.option('--out', 'out_path', required=True, type=click.Path(dir_okay=False),
              help='Rendered grid (.gpdm, values in [0, 1]).')
@click.option('--csv', 'csv_path', type=click.Path(dir_okay=False), help='Also write the rendering as CSV.')
@handle_errors
def render(in_path, dr, out_path, csv_path):
    """Magnitude + log compression of a grid for B-mode style display."""
    image = bmode_render(read_matrix(in_path), dr)
    with output_file(out_path) as target:
        write_matrix(target, image)
    if csv_path:
        with output_file(csv_path) as target:
            write_csv(target, image)
    ok(f"rendered {image.rows}x{image.cols} at {dr:g} dB to {out_path}")
