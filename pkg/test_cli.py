import json

import numpy as np

from cli import EXIT_CONFIG, EXIT_OK, parse_args, process_command


def _run(argv):
    return process_command(parse_args(argv))


class TestCli:

    def test_no_command(self):
        assert _run([]) == EXIT_CONFIG

    def test_unknown_key_exits_with_config_error(self):
        assert _run(['regress', '--set', 'colour=red']) == EXIT_CONFIG

    def test_invalid_value_exits_with_config_error(self):
        assert _run(['bandit', '-T', '0']) == EXIT_CONFIG

    def test_emit_config(self, capsys):
        assert _run(['regress', '--emit-config', '-e', '7', '--set', 'layer_sizes=[4,1]']) == EXIT_OK
        emitted = json.loads(capsys.readouterr().out)
        assert emitted['epochs'] == 7
        assert emitted['layer_sizes'] == [4, 1]

    def test_config_file_round_trip(self, tmp_path, capsys):
        assert _run(['bandit', '--emit-config', '-T', '25']) == EXIT_OK
        path = tmp_path / 'bandit.json'
        path.write_text(capsys.readouterr().out)
        assert _run(['bandit', '-c', str(path), '--emit-config']) == EXIT_OK
        assert json.loads(capsys.readouterr().out)['horizon'] == 25

    def test_regress_without_training(self, tmp_path):
        out = tmp_path / 'regress.json'
        code = _run(['regress', '-d', 'linear', '-e', '0', '--seeds', '0', '-o', str(out),
                     '--set', 'layer_sizes=[4,1]', '--set', 'synthetic_n=60'])
        assert code == EXIT_OK
        results = json.loads(out.read_text())
        assert np.isfinite(results['best']['rmse']['mean'])

    def test_missing_dataset_fails(self, tmp_path):
        code = _run(['regress', '-d', str(tmp_path / 'absent.csv'), '-e', '0', '--seeds', '0',
                     '--set', 'layer_sizes=[4,1]'])
        assert code == 1

    def test_bandit_trace_per_seed(self, tmp_path):
        code = _run(['bandit', '-T', '100', '--seeds', '0', '1', '-o', str(tmp_path),
                     '--set', 'layer_sizes=[8,1]', '--set', 'context_dim=2'])
        assert code == EXIT_OK
        files = sorted(p.name for p in tmp_path.glob('bandit_seed*.json'))
        assert files == ['bandit_seed0.json', 'bandit_seed1.json']
        trace = json.loads((tmp_path / 'bandit_seed0.json').read_text())
        assert len(trace['steps']) == 100

    def test_denoise_outputs(self, tmp_path):
        code = _run(['denoise', '-o', str(tmp_path), '--set', 'layer_sizes=[4,1]', '--set', 'context_dim=2',
                     '--set', 'n_train=50', '--set', 'grid_size=3', '--set', 'denoise_steps=2',
                     '--set', 'hmc_steps=3', '--set', 'hmc_substeps=3'])
        assert code == EXIT_OK
        assert (tmp_path / 'denoise_seed0.jsonl').exists()
        assert json.loads((tmp_path / 'summary.json').read_text())['seeds'][0]['seed'] == 0

    def test_props_subset(self, tmp_path):
        out = tmp_path / 'props.json'
        code = _run(['props', '-s', 'switching', 'gating', '--set', 'instances=10', '-o', str(out)])
        assert code == EXIT_OK
        assert json.loads(out.read_text())['passed'] is True
