# gunicorn_conf.py
import os

bind = f"0.0.0.0:{os.environ.get('PORT', '8000')}"
worker_class = "uvicorn.workers.UvicornWorker"
# Jobs live in an in-process registry, so one worker keeps /jobs consistent
workers = int(os.environ.get('GUNICORN_WORKERS', 1))

loglevel = os.environ.get('LOG_LEVEL', 'info').lower()
accesslog = '-'
errorlog = '-'

# Loops and campaigns run as background tasks after the response is sent
timeout = int(os.environ.get('GUNICORN_TIMEOUT', 120))
graceful_timeout = int(os.environ.get('GUNICORN_GRACEFUL_TIMEOUT', 30))
keepalive = int(os.environ.get('GUNICORN_KEEPALIVE', 5))
preload_app = True

print("Gunicorn config:")
for name, value in (("Bind", bind), ("Workers", workers), ("Timeout", timeout),
                    ("Graceful timeout", graceful_timeout), ("Log Level", loglevel)):
    print(f"  - {name}: {value}")
