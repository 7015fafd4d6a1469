"""End-to-end tests of the command line."""

import unittest
import os
import sys
import io
import json
import tempfile
import shutil
from contextlib import redirect_stderr, redirect_stdout

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

# Add project root to path
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

from src.cli import main
from src.config import FitConfig
from src.data_io import read_input_table
from src.fitter import fit


def run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = main(['-q', *argv])
    return code, out.getvalue(), err.getvalue()


class TestCommandLine(unittest.TestCase):
    """Test the three subcommands and the error contract."""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def _path(self, name):
        return os.path.join(self.temp_dir, name)

    def _simulate(self, stem, *extra):
        return run_cli('simulate', '--dist', 'a', '--n', '150', '--reps', '3', '--seed', '7',
                       '--workers', '1', '--calibration-draws', '20000',
                       '--out', self._path(f'{stem}.csv'), *extra)

    def test_simulate_then_fit_round_trip(self):
        data_path = self._path('data.csv')
        code, stdout, _ = self._simulate('summary', '--emit-data', data_path)
        self.assertEqual(code, 0)
        self.assertIn('sigma_star', stdout)
        for name in ('summary.csv', 'summary.json', 'summary.csv.manifest.json', 'data.csv'):
            self.assertTrue(os.path.exists(self._path(name)), name)

        report_path = self._path('fit.json')
        code, _, _ = run_cli('fit', data_path, '--transform', 'identity', '--out', report_path)
        self.assertEqual(code, 0)
        with open(report_path) as f:
            report = json.load(f)
        direct = fit(read_input_table(data_path, 'identity').dataset, FitConfig())
        assert_array_equal([c['estimate'] for c in report['coefficients']], direct.beta)
        self.assertEqual(len(report['hazard_curve']['t']), 200)
        self.assertTrue(os.path.exists(report_path + '.manifest.json'))

    def test_simulate_is_byte_identical(self):
        self.assertEqual(self._simulate('first')[0], 0)
        self.assertEqual(self._simulate('second')[0], 0)
        for suffix in ('.csv', '.json'):
            with open(self._path('first' + suffix), 'rb') as f1, open(self._path('second' + suffix), 'rb') as f2:
                self.assertEqual(f1.read(), f2.read(), suffix)

    def test_fit_csv_format(self):
        data_path = self._path('data.csv')
        self._simulate('summary', '--emit-data', data_path)
        code, _, _ = run_cli('fit', data_path, '--transform', 'identity', '--format', 'csv',
                             '--out', self._path('fit.csv'))
        self.assertEqual(code, 0)
        self.assertTrue(os.path.exists(self._path('fit.hazard.csv')))

    def test_bound_scales_with_n(self):
        values = {}
        for n in ('200', '800'):
            out = self._path(f'bound{n}.json')
            code, stdout, _ = run_cli('bound', '--dist', 'a', '--n', n, '--calibration-draws', '20000', '--out', out)
            self.assertEqual(code, 0)
            self.assertIn('x1 sigma_star=', stdout)
            with open(out) as f:
                values[n] = json.load(f)['sigma_star']
        assert_allclose(values['800']['x1'], values['200']['x1'] / 2.0, rtol=1e-12)
        assert_allclose(values['800']['x2'], values['200']['x2'] / 2.0, rtol=1e-12)

    def test_zero_replications_is_usage_error(self):
        code, _, stderr = run_cli('simulate', '--dist', 'a', '--n', '100', '--reps', '0',
                                  '--out', self._path('x.csv'))
        self.assertEqual(code, 2)
        self.assertTrue(stderr.startswith('error: code=USAGE exit=2 detail='))
        self.assertEqual(len(stderr.strip().splitlines()), 1)

    def test_unknown_distribution(self):
        code, _, stderr = run_cli('bound', '--dist', 'z', '--n', '100')
        self.assertEqual(code, 2)
        self.assertIn('unknown error distribution', stderr)

    def test_bad_arguments(self):
        self.assertEqual(run_cli('fit')[0], 2)
        self.assertEqual(run_cli('simulate', '--dist', 'a', '--n', 'many', '--out', 'x.csv')[0], 2)

    def test_invalid_status_names_row(self):
        path = self._path('bad.csv')
        with open(path, 'w') as f:
            f.write('time,status,x\n5,1,0.1\n6,2,0.3\n7,1,0.2\n')
        code, _, stderr = run_cli('fit', path)
        self.assertEqual(code, 3)
        self.assertIn('code=DATA exit=3', stderr)
        self.assertIn('row 1', stderr)

    def test_non_convergence_exits_four(self):
        data_path = self._path('data.csv')
        self._simulate('summary', '--emit-data', data_path)
        report_path = self._path('capped.json')
        code, _, stderr = run_cli('fit', data_path, '--transform', 'identity', '--max-iter', '1',
                                  '--out', report_path)
        self.assertEqual(code, 4)
        self.assertIn('code=CONVERGENCE', stderr)
        with open(report_path) as f:
            self.assertFalse(json.load(f)['diagnostics']['converged'])

    def test_unwritable_output_exits_three(self):
        blocker = self._path('plain_file')
        with open(blocker, 'w') as f:
            f.write('not a directory\n')
        code, _, stderr = run_cli('bound', '--dist', 'a', '--n', '100', '--calibration-draws', '20000',
                                  '--out', os.path.join(blocker, 'x.json'))
        self.assertEqual(code, 3)
        self.assertTrue(stderr.startswith('error: code=IO exit=3 detail='))
        self.assertEqual(len(stderr.strip().splitlines()), 1)


if __name__ == '__main__':
    unittest.main()
