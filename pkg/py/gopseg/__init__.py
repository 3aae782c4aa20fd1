#
# See top-level LICENSE.rst file for Copyright information
#
# -*- coding: utf-8 -*-
"""
gopseg
==============

Referring video object segmentation computed directly on the compressed
(GoP-structured) representation of a clip.

"""

from __future__ import absolute_import, division, print_function

from ._version import __version__
