// Copyright 2026 The avae Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

int main(int argc, char** argv) { return avae::cli::run(argc, argv); }
