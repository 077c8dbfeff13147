#include "rscavity/cli.hpp"

int main(int argc, char** argv) { return rscavity::cli_main(argc, argv); }
