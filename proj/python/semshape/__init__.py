from semshape._semshape import *  # noqa: F401,F403
