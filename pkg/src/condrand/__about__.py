# SPDX-FileCopyrightText: 2025-present kudouta <0x710cafe0@gmail.com>
#
# SPDX-License-Identifier: MIT
__version__ = "0.1.0"
