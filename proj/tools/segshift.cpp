#include "segshift/cli.hpp"

int main(int argc, char** argv) { return segshift::cli::run(argc, argv); }
