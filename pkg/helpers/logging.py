"""Vowel graph attention helpers."""
import json
import logging
import os
import queue
import threading
import time
from logging.handlers import TimedRotatingFileHandler

import apprise

LEVELS = {"debug": logging.DEBUG, "info": logging.INFO, "warning": logging.WARNING, "error": logging.ERROR}


class NotificationHandler:
    """Notification class."""

    def __init__(self, program, enabled=False, notify_urls=None):
        self.program = program
        self.message = ""

        if enabled and notify_urls:
            self.apobj = apprise.Apprise()
            urls = json.loads(notify_urls)
            for url in urls:
                self.apobj.add(url)
            self.queue = queue.Queue()
            self.start_worker()
            self.enabled = True
        else:
            self.enabled = False

    def start_worker(self):
        """Start notification worker."""
        threading.Thread(target=self.process_queue, daemon=True).start()

    def process_queue(self):
        """Process the queue."""
        while True:
            message, attachments = self.queue.get()
            if attachments:
                self.apobj.notify(body=message, attach=attachments)
            else:
                self.apobj.notify(body=message)
            self.queue.task_done()

    def queue_notification(self, message):
        """Queue notification messages."""
        if self.enabled:
            self.message += f"{message}\n\n"

    def send_notification(self, attachments=None):
        """Send the notification messages."""
        if self.enabled and self.message:
            msg = f"[VGAN {self.program}]\n\n" + self.message
            self.queue.put((msg, attachments or []))
            self.message = ""

    def wait(self):
        """Block until all queued notifications went out."""
        if self.enabled:
            self.queue.join()


class Logger:
    """Logger class."""

    my_logger = None

    def __init__(
        self,
        datadir,
        program,
        notificationhandler,
        logstokeep,
        debug_enabled,
        notify_enabled,
        console=True,
    ):
        """Logger init."""
        self.my_logger = logging.getLogger(program)
        self.datadir = datadir
        self.program = program
        self.notify_enabled = notify_enabled
        self.notificationhandler = notificationhandler

        # Drop handlers of a previous run in the same process
        for handler in list(self.my_logger.handlers):
            handler.close()
            self.my_logger.removeHandler(handler)

        if debug_enabled:
            self.my_logger.setLevel(logging.DEBUG)
        else:
            self.my_logger.setLevel(logging.INFO)
        self.my_logger.propagate = False

        date_fmt = "%Y-%m-%d %H:%M:%S"
        formatter = logging.Formatter(
            f"%(asctime)s - {program} - %(levelname)s - %(message)s", date_fmt
        )

        logdir = os.path.join(self.datadir, "logs")
        os.makedirs(logdir, exist_ok=True)

        # One file per program, rolled over at the first run after midnight
        file_handle = TimedRotatingFileHandler(
            os.path.join(logdir, f"{self.program}.log"),
            when="midnight",
            backupCount=int(logstokeep),
            encoding="utf-8",
        )
        file_handle.setFormatter(formatter)
        self.my_logger.addHandler(file_handle)

        # Log to console, stdout stays free for command output
        if console:
            console_handle = logging.StreamHandler()
            console_handle.setLevel(logging.INFO)
            console_handle.setFormatter(formatter)
            self.my_logger.addHandler(console_handle)

        self.debug(f"VGAN {program} started on %s" % time.strftime("%A %H:%M:%S %Y-%m-%d"))

        if self.notify_enabled:
            self.debug("Notifications are enabled")
        else:
            self.debug("Notifications are disabled")

    def log(self, message, level="info", notify=False):
        """Write `message` at a named level and queue it for the run summary when asked."""
        self.my_logger.log(LEVELS[level], message)
        if self.notify_enabled and notify:
            self.notificationhandler.queue_notification(message)

    def info(self, message, notify=False):
        self.log(message, "info", notify)

    def warning(self, message, notify=False):
        self.log(message, "warning", notify)

    def error(self, message, notify=True):
        self.log(message, "error", notify)

    def debug(self, message, notify=False):
        self.log(message, "debug", notify)

    def close(self):
        """Detach and close all handlers."""
        for handler in list(self.my_logger.handlers):
            handler.close()
            self.my_logger.removeHandler(handler)
