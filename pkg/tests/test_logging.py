"""Tests for bilab.logging module."""
import logging
import shutil
import tempfile
from pathlib import Path

from bilab.logging import configure_module_logger, get_logger, setup_logging


class TestLogging:
    """Tests for the centralized logging setup."""

    def setup_method(self):
        """Set up a temporary directory."""
        self.test_dir = Path(tempfile.mkdtemp())

    def teardown_method(self):
        """Close handlers and clean up."""
        logger = logging.getLogger("bilab")
        for handler in logger.handlers:
            handler.close()
        logger.handlers.clear()
        if self.test_dir.exists():
            shutil.rmtree(self.test_dir)

    def test_module_logger_names(self):
        """Test that module loggers live under the bilab logger."""
        assert configure_module_logger("bilab.runge").name == "bilab.runge"
        assert configure_module_logger("runge").name == "bilab.runge"
        assert get_logger().name == "bilab"

    def test_quiet_disables_output(self):
        """Test that quiet mode silences every level."""
        logger = setup_logging(quiet=True)

        assert not logger.isEnabledFor(logging.CRITICAL)
        assert isinstance(logger.handlers[0], logging.NullHandler)

    def test_level(self):
        """Test the configured level."""
        logger = setup_logging(log_level="DEBUG")

        assert logger.level == logging.DEBUG
        assert len(logger.handlers) == 1

    def test_file_output(self):
        """Test that file output writes module messages to the log file."""
        log_file = self.test_dir / "logs" / "bilab.log"
        setup_logging(log_file=log_file, console_output=False, file_output=True)

        configure_module_logger("bilab.recovery").info("recovered coefficients")
        for handler in logging.getLogger("bilab").handlers:
            handler.flush()

        text = log_file.read_text()
        assert "bilab.recovery" in text
        assert "recovered coefficients" in text

    def test_repeated_setup_does_not_duplicate_handlers(self):
        """Test that handlers are replaced, not stacked."""
        setup_logging()
        logger = setup_logging()

        assert len(logger.handlers) == 1
