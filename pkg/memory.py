import json
import logging
import sqlite3
from datetime import datetime
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)

DEFAULT_KEEP = 500


class RunMemory:
    """Persistent run history in SQLite: command, echoed settings and report"""

    def __init__(self, db_path: str = "sphericity_runs.db", keep: int = DEFAULT_KEEP):
        self.db_path = db_path
        self.keep = keep
        self.init_database()

    def init_database(self):
        """Initialize SQLite database for the run history"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                timestamp TEXT NOT NULL,
                command TEXT NOT NULL,
                config_json TEXT NOT NULL,
                report_json TEXT NOT NULL,
                msq REAL,
                exit_code INTEGER NOT NULL DEFAULT 0
            )
        ''')

        conn.commit()
        conn.close()

    def store_run(self, command: str, config: Dict[str, Any], report: Dict[str, Any],
                  exit_code: int = 0) -> int:
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        timestamp = datetime.now().isoformat()
        msq = report.get('estimate', {}).get('msq') if isinstance(report.get('estimate'), dict) else None

        cursor.execute('''
            INSERT INTO runs (timestamp, command, config_json, report_json, msq, exit_code)
            VALUES (?, ?, ?, ?, ?, ?)
        ''', (timestamp, command, json.dumps(config, sort_keys=True, default=str),
              json.dumps(report, sort_keys=True, default=str), msq, exit_code))

        run_id = cursor.lastrowid or 0
        conn.commit()
        conn.close()

        self._prune()
        logger.debug("stored run %d (%s) in %s", run_id, command, self.db_path)
        return int(run_id)

    def _prune(self):
        """Drop the oldest runs beyond the retention limit"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute('SELECT COUNT(*) FROM runs')
        count = cursor.fetchone()[0]
        if count > self.keep:
            cursor.execute('''
                DELETE FROM runs WHERE id IN (
                    SELECT id FROM runs ORDER BY id ASC LIMIT ?
                )
            ''', (count - self.keep,))

        conn.commit()
        conn.close()

    def get_recent_runs(self, limit: int = 10, command: Optional[str] = None) -> List[Dict[str, Any]]:
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        if command:
            cursor.execute('''
                SELECT id, timestamp, command, config_json, report_json, msq, exit_code
                FROM runs WHERE command = ? ORDER BY id DESC LIMIT ?
            ''', (command, limit))
        else:
            cursor.execute('''
                SELECT id, timestamp, command, config_json, report_json, msq, exit_code
                FROM runs ORDER BY id DESC LIMIT ?
            ''', (limit,))

        runs = []
        for row in cursor.fetchall():
            run_id, timestamp, command_name, config_json, report_json, msq, exit_code = row
            runs.append({
                'id': run_id,
                'timestamp': timestamp,
                'command': command_name,
                'config': json.loads(config_json),
                'report': json.loads(report_json),
                'msq': msq,
                'exit_code': exit_code
            })

        conn.close()
        return runs

    def get_memory_stats(self) -> Dict[str, Any]:
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute('SELECT COUNT(*) FROM runs')
        total_runs = cursor.fetchone()[0]

        cursor.execute('SELECT command, COUNT(*) FROM runs GROUP BY command')
        by_command = dict(cursor.fetchall())

        cursor.execute('SELECT COUNT(*) FROM runs WHERE exit_code != 0')
        failed = cursor.fetchone()[0]

        conn.close()

        return {
            'total_runs': total_runs,
            'runs_by_command': by_command,
            'failed_runs': failed,
        }

    def clear_memory(self) -> None:
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()
        cursor.execute('DELETE FROM runs')
        conn.commit()
        conn.close()
