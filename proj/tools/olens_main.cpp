#include "olens/cli.hpp"

int main(int argc, char** argv) { return olens::run_cli(argc, argv); }
