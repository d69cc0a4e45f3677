#include <dmgp/cli.hpp>

int main(int argc, char** argv)
{
    return dmgp::cli::run(argc, argv);
}
