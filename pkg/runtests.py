#!/usr/bin/env python
# -*- coding: utf-8
import os
import sys
import unittest


def run_tests(*test_args):
    if not test_args:
        test_args = ['tests']

    sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    for label in test_args:
        if os.path.isdir(label):
            suite.addTests(loader.discover(label, top_level_dir='.'))
        else:
            suite.addTests(loader.loadTestsFromName(label))
    result = unittest.TextTestRunner(verbosity=1).run(suite)
    failures = len(result.failures) + len(result.errors)
    sys.exit(bool(failures))


if __name__ == '__main__':
    run_tests(*sys.argv[1:])
