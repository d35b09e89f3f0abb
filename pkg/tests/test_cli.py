import numpy as np
import pytest
from click.testing import CliRunner

from src.commands import run as run_module
from src.commands.common import INCOMPLETE_MARKER
from src.main import cli
from src.models.config import load_config
from src.models.errors import SamplerAborted
from src.models.grid import read_labels, read_matrix

QUICK_RUN = ['--iters', '6', '--burnin', '2', '--leapfrog-min', '2', '--leapfrog-max', '3',
             '--eps-init', '0.01', '--adapt-window', '2', '--seed', '1']


@pytest.fixture
def runner(monkeypatch):
    monkeypatch.setenv('GGDPOTTS_PROGRESS', '0')
    return CliRunner()


@pytest.fixture
def phantom_dir(runner, tmp_path):
    out = tmp_path / 'phantom'
    result = runner.invoke(cli, ['simulate', '--preset', 'group2', '--dims', '12x12', '--seed', '5',
                                 '--psf-size', '3', '--psf-var', '1.0', '--out', str(out)])
    assert result.exit_code == 0, result.output
    return out


def run_args(phantom_dir, out):
    return ['run', '--obs', str(phantom_dir / 'y.gpdm'), '--psf', str(phantom_dir / 'psf.gpdm'),
            '--out', str(out)]


def test_simulate_writes_a_complete_directory(phantom_dir):
    for name in ('x.gpdm', 'z.gpdl', 'y.gpdm', 'psf.gpdm', 'x.csv', 'z.csv', 'y.csv', 'manifest.txt'):
        assert (phantom_dir / name).exists(), name
    assert not (phantom_dir / INCOMPLETE_MARKER).exists()
    manifest = load_config(phantom_dir / 'manifest.txt')
    assert manifest['command'] == 'simulate'
    assert manifest['phantom.name'] == 'group2'
    assert float(manifest['sigma2_true']) > 0.0
    assert read_labels(phantom_dir / 'z.gpdl').k_classes == 2


def test_simulate_needs_exactly_one_source(runner, tmp_path):
    neither = runner.invoke(cli, ['simulate', '--out', str(tmp_path / 'a')])
    assert neither.exit_code == 2
    spec = tmp_path / 'phantom.cfg'
    spec.write_text('dims = 8x8\nclass_1 = 1.0 1.0\nshape_0 = background 1\n', encoding='utf-8')
    both = runner.invoke(cli, ['simulate', '--preset', 'group1', '--spec', str(spec),
                               '--out', str(tmp_path / 'b')])
    assert both.exit_code == 2


def test_simulate_from_a_spec_file(runner, tmp_path):
    spec = tmp_path / 'phantom.cfg'
    spec.write_text('# single class\ndims = 10x10\nclass_1 = 2.0 2.0\nshape_0 = background 1\n',
                    encoding='utf-8')
    out = tmp_path / 'sim'
    result = runner.invoke(cli, ['simulate', '--spec', str(spec), '--seed', '3', '--psf-size', '3',
                                 '--out', str(out)])
    assert result.exit_code == 0, result.output
    assert read_matrix(out / 'y.gpdm').dims == (10, 10)


def test_run_writes_estimates(runner, phantom_dir, tmp_path):
    out = tmp_path / 'run'
    result = runner.invoke(cli, run_args(phantom_dir, out) + QUICK_RUN)
    assert result.exit_code == 0, result.output
    for name in ('x_hat.gpdm', 'z_hat.gpdl', 'x_hat.csv', 'z_hat.csv', 'scalars.csv',
                 'traces_chain0.csv', 'hist_sigma2.csv', 'manifest.txt'):
        assert (out / name).exists(), name
    assert not (out / 'psrf.csv').exists()
    assert not (out / INCOMPLETE_MARKER).exists()

    traces = (out / 'traces_chain0.csv').read_text().splitlines()
    assert traces[0].startswith('iter,sigma2,xi_1,xi_2,gamma_1,gamma_2,accept_hmc')
    assert len(traces) == 7
    manifest = load_config(out / 'manifest.txt')
    assert manifest['sampler.n_iter'] == '6'
    assert manifest['run.label_switching'] == 'permutation-aligned evaluation'
    assert int(manifest['cost.fft_forward']) > 0


def test_run_is_reproducible(runner, phantom_dir, tmp_path):
    for name in ('a', 'b'):
        result = runner.invoke(cli, run_args(phantom_dir, tmp_path / name) + QUICK_RUN)
        assert result.exit_code == 0, result.output
    for name in ('x_hat.gpdm', 'z_hat.gpdl', 'traces_chain0.csv'):
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()


def test_two_chains_write_a_psrf_table(runner, phantom_dir, tmp_path):
    out = tmp_path / 'run2'
    result = runner.invoke(cli, run_args(phantom_dir, out) + QUICK_RUN + ['--chains', '2'])
    assert result.exit_code in (0, 4), result.output
    assert (out / 'psrf.csv').read_text().splitlines()[0] == 'variable,psrf,pass'
    assert (out / 'traces_chain1.csv').exists()


def test_run_rejects_inconsistent_iterations(runner, phantom_dir, tmp_path):
    result = runner.invoke(cli, run_args(phantom_dir, tmp_path / 'bad') + ['--iters', '5', '--burnin', '10'])
    assert result.exit_code == 2
    assert 'InvalidParameterError' in result.output


def test_aborted_sampler_keeps_the_incomplete_marker(runner, phantom_dir, tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise SamplerAborted('x move failed at iteration 0: energy is nan', move='x')

    monkeypatch.setattr(run_module, 'run_chains', boom)
    out = tmp_path / 'aborted'
    result = runner.invoke(cli, run_args(phantom_dir, out) + QUICK_RUN)
    assert result.exit_code == 3
    assert (out / INCOMPLETE_MARKER).exists()
    assert load_config(out / 'diagnostics.txt')['move'] == 'x'


def test_config_file_supplies_defaults(runner, phantom_dir, tmp_path):
    cfg = tmp_path / 'run.cfg'
    cfg.write_text('iters = 6\nburnin = 2\nleapfrog-min = 2\nleapfrog_max = 3\n'
                   'eps_init = 0.01\nadapt_window = 2\nseed = 1\n', encoding='utf-8')
    out = tmp_path / 'cfg_run'
    result = runner.invoke(cli, ['--config', str(cfg)] + run_args(phantom_dir, out) + ['--burnin', '3'])
    assert result.exit_code == 0, result.output
    manifest = load_config(out / 'manifest.txt')
    assert manifest['sampler.n_iter'] == '6'
    assert manifest['sampler.n_burnin'] == '3'
    assert manifest['sampler.leapfrog_max'] == '3'


def test_malformed_config_is_a_usage_error(runner, tmp_path):
    cfg = tmp_path / 'bad.cfg'
    cfg.write_text('iters 6\n', encoding='utf-8')
    result = runner.invoke(cli, ['--config', str(cfg), 'render', '--in', str(cfg), '--out', str(tmp_path / 'r')])
    assert result.exit_code == 2


def test_baselines(runner, phantom_dir, tmp_path):
    obs = ['--obs', str(phantom_dir / 'y.gpdm'), '--psf', str(phantom_dir / 'psf.gpdm')]
    l2 = runner.invoke(cli, ['baseline'] + obs + ['--method', 'l2', '--out', str(tmp_path / 'l2')])
    assert l2.exit_code == 0, l2.output
    assert read_matrix(tmp_path / 'l2' / 'x_hat.gpdm').dims == (12, 12)

    capped = runner.invoke(cli, ['baseline'] + obs + ['--method', 'l1', '--lambda', 'auto', '--max-iter', '3',
                                                      '--tol', '0', '--out', str(tmp_path / 'l1')])
    assert capped.exit_code == 4, capped.output
    assert len((tmp_path / 'l1' / 'objective.csv').read_text().splitlines()) == 5
    assert load_config(tmp_path / 'l1' / 'manifest.txt')['lambda_rule'] == 'auto'

    negative = runner.invoke(cli, ['baseline'] + obs + ['--lambda', '-1', '--out', str(tmp_path / 'neg')])
    assert negative.exit_code == 2


def test_metrics_and_render(runner, phantom_dir, tmp_path):
    est = tmp_path / 'l2'
    assert runner.invoke(cli, ['baseline', '--obs', str(phantom_dir / 'y.gpdm'), '--psf',
                               str(phantom_dir / 'psf.gpdm'), '--out', str(est)]).exit_code == 0
    report = tmp_path / 'report.csv'
    result = runner.invoke(cli, ['metrics', '--truth', str(phantom_dir / 'x.gpdm'), '--obs',
                                 str(phantom_dir / 'y.gpdm'), '--est', str(est / 'x_hat.gpdm'),
                                 '--labels', str(phantom_dir / 'z.gpdl'), '--est-labels',
                                 str(phantom_dir / 'z.gpdl'), '--cnr-region', '0,0,3,3', '6,6,3,3',
                                 '--report', str(report)])
    assert result.exit_code == 0, result.output
    assert 'ISNR' in result.output
    rows = dict(line.split(',') for line in report.read_text().splitlines()[1:])
    assert float(rows['oa']) == 1.0
    assert not report.with_name(report.name + INCOMPLETE_MARKER).exists()

    rendered = tmp_path / 'bmode.gpdm'
    result = runner.invoke(cli, ['render', '--in', str(phantom_dir / 'y.gpdm'), '--out', str(rendered),
                                 '--csv', str(tmp_path / 'bmode.csv')])
    assert result.exit_code == 0, result.output
    image = read_matrix(rendered).data
    assert image.max() == 1.0 and image.min() >= 0.0
    assert (tmp_path / 'bmode.csv').exists()


def test_metrics_usage_errors(runner, phantom_dir):
    est = str(phantom_dir / 'x.gpdm')
    half = runner.invoke(cli, ['metrics', '--est', est, '--labels', str(phantom_dir / 'z.gpdl')])
    assert half.exit_code == 2
    bad_region = runner.invoke(cli, ['metrics', '--est', est, '--cnr-region', '0,0,3', '6,6,3,3'])
    assert bad_region.exit_code == 2
    nothing = runner.invoke(cli, ['metrics', '--est', est])
    assert nothing.exit_code == 2


def test_render_of_a_zero_grid_is_a_numeric_failure(runner, tmp_path):
    from src.models.grid import ImageGrid, write_matrix
    zero = tmp_path / 'zero.gpdm'
    write_matrix(zero, ImageGrid(np.zeros((4, 4))))
    result = runner.invoke(cli, ['render', '--in', str(zero), '--out', str(tmp_path / 'r.gpdm')])
    assert result.exit_code == 3
    assert 'NumericFailure' in result.output


def test_run_with_known_labels(runner, phantom_dir, tmp_path):
    out = tmp_path / 'known'
    labels = ['--labels', str(phantom_dir / 'z.gpdl')]
    result = runner.invoke(cli, run_args(phantom_dir, out) + QUICK_RUN + labels)
    assert result.exit_code == 0, result.output
    assert read_labels(out / 'z_hat.gpdl') == read_labels(phantom_dir / 'z.gpdl')
    assert load_config(out / 'manifest.txt')['input.labels'].endswith('z.gpdl')

    wrong_k = runner.invoke(cli, run_args(phantom_dir, tmp_path / 'k3') + QUICK_RUN + labels + ['--k', '3'])
    assert wrong_k.exit_code == 2


@pytest.mark.parametrize('flags', [
    ['--paper-exact-ratio', '--paper-adapt-direction'],
    ['--omit-hastings-term', '--inverted-adaptation'],
])
def test_replication_switches(runner, phantom_dir, tmp_path, flags):
    out = tmp_path / 'switches'
    result = runner.invoke(cli, run_args(phantom_dir, out) + QUICK_RUN + flags)
    assert result.exit_code == 0, result.output
    manifest = load_config(out / 'manifest.txt')
    assert manifest['sampler.omit_hastings_term'] == 'True'
    assert manifest['sampler.inverted_adaptation'] == 'True'


def test_config_keys_may_be_flag_names(runner, phantom_dir, tmp_path):
    out = tmp_path / 'flag_keys'
    cfg = tmp_path / 'run.cfg'
    cfg.write_text(f'k = 3\nout = {out}\npaper-exact-ratio = true\n', encoding='utf-8')
    result = runner.invoke(cli, ['--config', str(cfg), 'run', '--obs', str(phantom_dir / 'y.gpdm'),
                                 '--psf', str(phantom_dir / 'psf.gpdm')] + QUICK_RUN)
    assert result.exit_code == 0, result.output
    manifest = load_config(out / 'manifest.txt')
    assert manifest['model.k_classes'] == '3'
    assert manifest['sampler.omit_hastings_term'] == 'True'

    rendered = tmp_path / 'bmode.gpdm'
    cfg.write_text(f'in = {phantom_dir / "y.gpdm"}\nout = {rendered}\ndr = 30\n', encoding='utf-8')
    result = runner.invoke(cli, ['--config', str(cfg), 'render'])
    assert result.exit_code == 0, result.output
    assert rendered.exists()


def test_unknown_config_key_is_a_usage_error(runner, phantom_dir, tmp_path):
    cfg = tmp_path / 'typo.cfg'
    cfg.write_text('iterz = 6\n', encoding='utf-8')
    result = runner.invoke(cli, ['--config', str(cfg)] + run_args(phantom_dir, tmp_path / 'typo') + QUICK_RUN)
    assert result.exit_code == 2
    assert 'iterz' in result.output
    assert not (tmp_path / 'typo').exists()
