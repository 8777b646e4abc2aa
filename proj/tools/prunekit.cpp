#include "prunekit/cli.hpp"

int main(int argc, char** argv) { return prunekit::cli::run(argc, argv); }
