#!/usr/bin/env python
# -*- coding: utf-8 -*-
import os
import re
import subprocess
import sys

from setuptools import setup

HERE = os.path.dirname(os.path.abspath(__file__))


def read(*parts):
    with open(os.path.join(HERE, *parts), encoding='utf-8') as handle:
        return handle.read()


def get_version(*file_paths):
    """Reads __version__ out of mmts/__init__.py without importing numpy."""
    match = re.search(r"^__version__ = ['\"]([^'\"]*)['\"]", read(*file_paths), re.M)
    if match is None:
        raise RuntimeError('No __version__ in {}.'.format(os.path.join(*file_paths)))
    return match.group(1)


def get_requirements(name):
    lines = (line.split('#')[0].strip() for line in read(name).splitlines())
    return [line for line in lines if line and not line.startswith('-')]


version = get_version('mmts', '__init__.py')

# `python setup.py publish` builds and uploads; `python setup.py tag` tags the release.
if sys.argv[-1] == 'publish':
    subprocess.check_call([sys.executable, 'setup.py', 'sdist', 'bdist_wheel'])
    subprocess.check_call(['twine', 'upload', 'dist/*'])
    sys.exit()

if sys.argv[-1] == 'tag':
    subprocess.check_call(['git', 'tag', '-a', version, '-m', 'mmts {}'.format(version)])
    subprocess.check_call(['git', 'push', '--tags'])
    sys.exit()

setup(
    name='mmts',
    version=version,
    description='Multi-modal temperature and margin schedules for contrastive learning on long-tail data.',
    long_description='{}\n\n{}'.format(read('README.rst'), read('HISTORY.rst').replace('.. :changelog:', '')),
    long_description_content_type='text/x-rst',
    author='Ramon Maria Gallart Escolà',
    author_email='rgallart@easydevmixin.com',
    url='https://github.com/easydevmixin/mmts',
    packages=['mmts'],
    install_requires=get_requirements('requirements.txt'),
    tests_require=get_requirements('requirements_test.txt'),
    entry_points={'console_scripts': ['mmts = mmts.cli:main']},
    python_requires='>=3.7',
    license='BSD',
    zip_safe=False,
    keywords='contrastive-learning temperature-schedule margin long-tail retrieval',
    classifiers=[
        'Development Status :: 3 - Alpha',
        'Intended Audience :: Science/Research',
        'License :: OSI Approved :: BSD License',
        'Programming Language :: Python :: 3 :: Only',
        'Programming Language :: Python :: 3.7',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3.9',
        'Programming Language :: Python :: 3.10',
        'Topic :: Scientific/Engineering :: Artificial Intelligence',
    ],
)
