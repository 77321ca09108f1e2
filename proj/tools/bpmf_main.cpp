// Copyright 2026 The bpmf-dist Authors
// SPDX-License-Identifier: Apache-2.0

#include "bpmf/engine.hpp"

int main(int argc, char** argv) { return bpmf::cli_main(argc, argv); }
