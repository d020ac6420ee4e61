#include "cli.hpp"

int main(int argc, char** argv) { return pfv2::cli::run(argc, argv); }
