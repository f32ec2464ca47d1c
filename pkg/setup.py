#!/usr/bin/env python
"""levyid - Lévy SDE drift identification : Application setup."""

import setuptools


if __name__ == "__main__":
    setuptools.setup()
