import logging
import sys

# Check that we're not running on an unsupported Python version.
if sys.version_info < (3, 8):
    print("gabc_ssda requires Python 3.8 or above.")
    sys.exit(1)

logger = logging.getLogger(__name__)


def run():
    try:
        from gabc_ssda import main

        sys.exit(main.main())
    except ImportError as e:
        print("Unable to import gabc_ssda.main:", e)
        sys.exit(1)
    except KeyboardInterrupt:
        logger.info("Interrupted; checkpoints of finished epochs are kept.")
        sys.exit(130)
