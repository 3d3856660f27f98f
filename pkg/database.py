import json
import logging
import sqlite3

import pandas as pd

logger = logging.getLogger(__name__)


class RunDatabase:
    """SQLite registry of sampling and scheduling runs"""

    def __init__(self, db_path="runs.db"):
        self.db_path = db_path
        self.init_database()

    def init_database(self):
        """Initialize the database with required tables"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS runs (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                kind TEXT NOT NULL,
                seed INTEGER,
                solver TEXT,
                schedule_kind TEXT,
                nfe INTEGER,
                batch INTEGER,
                dataset TEXT,
                out_dir TEXT,
                created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
            )
        ''')

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS schedules (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL REFERENCES runs(id),
                budget INTEGER,
                gamma REAL,
                total_cost REAL,
                times_json TEXT,
                path_json TEXT
            )
        ''')

        cursor.execute('''
            CREATE TABLE IF NOT EXISTS endpoints (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id INTEGER NOT NULL REFERENCES runs(id),
                sample_index INTEGER,
                endpoint_norm REAL,
                nfe INTEGER
            )
        ''')

        cursor.execute('CREATE INDEX IF NOT EXISTS idx_runs_kind ON runs(kind)')
        cursor.execute('CREATE INDEX IF NOT EXISTS idx_schedules_run ON schedules(run_id)')
        cursor.execute('CREATE INDEX IF NOT EXISTS idx_endpoints_run ON endpoints(run_id)')

        conn.commit()
        conn.close()

    def record_run(self, kind, config):
        """Insert one run row and return its id"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()
        cursor.execute('''
            INSERT INTO runs (kind, seed, solver, schedule_kind, nfe, batch, dataset, out_dir)
            VALUES (?, ?, ?, ?, ?, ?, ?, ?)
        ''', (
            kind,
            int(config.seed),
            config.solver.label() if kind == 'sample' else config.teacher.label(),
            config.schedule_kind if kind == 'sample' else 'gits',
            # gits budgets live in the schedules table
            config.nfe if kind == 'sample' else None,
            config.batch if kind == 'sample' else config.warmup,
            config.dataset,
            str(config.out_dir)
        ))
        run_id = cursor.lastrowid
        conn.commit()
        conn.close()
        logger.info("recorded %s run %d in %s", kind, run_id, self.db_path)
        return run_id

    def insert_endpoints(self, run_id, endpoints):
        """endpoints: iterable of (sample_index, endpoint_norm, nfe)"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()
        cursor.executemany('''
            INSERT INTO endpoints (run_id, sample_index, endpoint_norm, nfe)
            VALUES (?, ?, ?, ?)
        ''', [(run_id, int(i), float(norm), int(nfe)) for i, norm, nfe in endpoints])
        conn.commit()
        conn.close()

    def insert_schedule(self, run_id, result):
        """Store one DPResult"""
        conn = sqlite3.connect(self.db_path)
        cursor = conn.cursor()
        cursor.execute('''
            INSERT INTO schedules (run_id, budget, gamma, total_cost, times_json, path_json)
            VALUES (?, ?, ?, ?, ?, ?)
        ''', (
            run_id,
            result.budget,
            result.gamma,
            result.total_cost,
            json.dumps(list(result.schedule.times)),
            json.dumps(list(result.path_indices))
        ))
        conn.commit()
        conn.close()

    def list_runs(self, kind=None, sort_order='desc'):
        """All runs, newest first by default"""
        if sort_order.lower() not in ['asc', 'desc']:
            sort_order = 'desc'

        conn = sqlite3.connect(self.db_path)
        where_clause = ''
        params = []
        if kind:
            where_clause = 'WHERE kind = ?'
            params.append(kind)

        query = f'''
            SELECT id, kind, seed, solver, schedule_kind, nfe, batch, dataset, out_dir, created_at
            FROM runs
            {where_clause}
            ORDER BY id {sort_order.upper()}
        '''

        df = pd.read_sql_query(query, conn, params=params)
        conn.close()
        return df

    def get_schedules(self, run_id=None):
        """Stored GITS schedules, times decoded back to lists"""
        conn = sqlite3.connect(self.db_path)

        query = '''
            SELECT run_id, budget, gamma, total_cost, times_json, path_json
            FROM schedules
        '''
        params = []
        if run_id is not None:
            query += ' WHERE run_id = ?'
            params.append(run_id)
        query += ' ORDER BY run_id, budget'

        df = pd.read_sql_query(query, conn, params=params)
        conn.close()

        df['times'] = df.pop('times_json').map(json.loads)
        df['path'] = df.pop('path_json').map(json.loads)
        return df

    def get_endpoints(self, run_id):
        conn = sqlite3.connect(self.db_path)
        df = pd.read_sql_query('''
            SELECT sample_index, endpoint_norm, nfe
            FROM endpoints
            WHERE run_id = ?
            ORDER BY sample_index
        ''', conn, params=(run_id,))
        conn.close()
        return df

    def endpoint_summary(self):
        """Per sampling run: sample count and endpoint-norm statistics"""
        conn = sqlite3.connect(self.db_path)

        query = '''
            SELECT
                r.id as run_id,
                r.solver,
                r.schedule_kind,
                r.nfe,
                COUNT(e.id) as samples,
                AVG(e.endpoint_norm) as mean_norm,
                MIN(e.endpoint_norm) as min_norm,
                MAX(e.endpoint_norm) as max_norm
            FROM runs r
            JOIN endpoints e ON e.run_id = r.id
            GROUP BY r.id, r.solver, r.schedule_kind, r.nfe
            ORDER BY r.id
        '''

        df = pd.read_sql_query(query, conn)
        conn.close()
        return df
